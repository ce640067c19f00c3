//! Model evaluation on simulated scenarios: does the model notice the scene
//! is out of distribution, and can it pick a control action that avoids the
//! collision? Ground truth for the second task comes from exhaustively
//! re-simulating every candidate action.

use crate::catalog::AssetCatalog;
use crate::gateway::{
    ChatMessage, ChatRequest, Gateway, GatewayError, ImageAttachment, JsonSchema, Role,
};
use crate::gateway::extract::SchemaNode;
use crate::generation::PromptSet;
use crate::sim::{
    render_frame, simulate, ActionCommand, ActionKind, Frame, RenderStyle, RenderedFrame,
    ScenarioConfig, SimError, SimulationTrace,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace has no frames")]
    EmptyTrace,
    #[error("no records to aggregate")]
    NoRecords,
    #[error("action set must be non-empty")]
    EmptyActionSet,
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub is_ood: bool,
    /// Tree path (leaf id) the scenario was generated from.
    pub ood_category: String,
    /// Action kinds whose replayed simulation has zero collision events.
    pub safe_actions: BTreeSet<ActionKind>,
}

/// One evaluation unit: a simulated scenario, its three key frames, and the
/// verified ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub id: String,
    pub config: ScenarioConfig,
    pub key_frames: [Frame; 3],
    pub ground_truth: GroundTruth,
    pub payload_style: RenderStyle,
}

/// Why a task produced no verdict. Provider trouble is not a model mistake,
/// so these tasks are excluded from rates rather than counted as failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Unevaluated {
    Describe { error: String },
    Judge { error: String },
    Act { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub ood_correct: bool,
    pub action_safe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub ood_category: String,
    pub model_id: String,
    pub payload_style: RenderStyle,
    pub frame_descriptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_rationale: Option<String>,
    /// Raw action string the model picked; may be outside the action set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unevaluated: Option<Unevaluated>,
}

/// Exact success counts for one slice of the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLine {
    pub successes: u64,
    pub total: u64,
    /// Percentage truncated (not rounded) to two decimals, e.g. 110/130
    /// reports as 84.61.
    pub percent: f64,
}

impl RateLine {
    pub fn new(successes: u64, total: u64) -> Self {
        RateLine { successes, total, percent: truncated_percent(successes, total) }
    }
}

/// 100·s/t truncated toward zero at two decimals, computed in integer
/// arithmetic so no binary-float artifact can flip the last digit.
pub fn truncated_percent(successes: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let basis_points = successes * 10_000 / total;
    basis_points as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRates {
    pub ood: RateLine,
    pub action: RateLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub model_id: String,
    pub payload_style: RenderStyle,
    pub evaluated: u64,
    pub unevaluated: u64,
    pub overall_ood: RateLine,
    pub overall_action: RateLine,
    pub per_category: BTreeMap<String, CategoryRates>,
}

impl SuccessReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

// ---------------------------------------------------------------------------
// Task construction
// ---------------------------------------------------------------------------

/// First, middle, last: indices 0, ⌊(n−1)/2⌋, n−1. Traces shorter than three
/// frames repeat what they have so downstream always sees three frames.
pub fn extract_key_frames(trace: &SimulationTrace) -> Result<[Frame; 3], EvalError> {
    let n = trace.frames.len();
    if n == 0 {
        return Err(EvalError::EmptyTrace);
    }
    let pick = |i: usize| trace.frames[i.min(n - 1)].clone();
    Ok([pick(0), pick((n - 1) / 2), pick(n - 1)])
}

/// Verify which actions avoid every collision by replaying the simulation
/// once per candidate, command issued at t = 0.
pub fn verified_safe_actions(
    config: &ScenarioConfig,
    catalog: &AssetCatalog,
    action_set: &[ActionCommand],
    seed: u64,
) -> Result<BTreeSet<ActionKind>, EvalError> {
    if action_set.is_empty() {
        return Err(EvalError::EmptyActionSet);
    }
    let mut safe = BTreeSet::new();
    for action in action_set {
        let plan = [(0.0, action.clone())];
        let trace = simulate(config, catalog, seed, &plan)?;
        if trace.collisions().count() == 0 {
            safe.insert(action.kind);
        }
    }
    Ok(safe)
}

/// Assemble an [`EvalTask`] from a simulated scenario: key frames plus the
/// exhaustively verified safe-action set. `is_ood` is true for every
/// generated scenario; the label is carried so mixed benchmarks with
/// in-distribution fillers stay possible.
pub fn build_task(
    task_id: impl Into<String>,
    config: &ScenarioConfig,
    trace: &SimulationTrace,
    catalog: &AssetCatalog,
    action_set: &[ActionCommand],
    is_ood: bool,
    payload_style: RenderStyle,
    seed: u64,
) -> Result<EvalTask, EvalError> {
    Ok(EvalTask {
        id: task_id.into(),
        config: config.clone(),
        key_frames: extract_key_frames(trace)?,
        ground_truth: GroundTruth {
            is_ood,
            ood_category: config.ood_label.clone(),
            safe_actions: verified_safe_actions(config, catalog, action_set, seed)?,
        },
        payload_style,
    })
}

// ---------------------------------------------------------------------------
// Model interaction
// ---------------------------------------------------------------------------

fn describe_schema() -> JsonSchema {
    JsonSchema::new(
        "frame_description",
        SchemaNode::object(vec![("description", SchemaNode::String)], vec![]),
    )
}

fn verdict_schema() -> JsonSchema {
    JsonSchema::new(
        "ood_verdict",
        SchemaNode::object(
            vec![("is_ood", SchemaNode::Bool), ("rationale", SchemaNode::String)],
            vec![],
        ),
    )
}

fn action_schema() -> JsonSchema {
    JsonSchema::new(
        "action_choice",
        SchemaNode::object(
            vec![("action", SchemaNode::String), ("rationale", SchemaNode::String)],
            vec![],
        ),
    )
}

fn frame_message(task: &EvalTask, index: usize) -> Result<ChatMessage, EvalError> {
    let frame = &task.key_frames[index];
    match task.payload_style {
        RenderStyle::Text => {
            let RenderedFrame::Text(text) = render_frame(frame, RenderStyle::Text) else {
                unreachable!("text style renders text");
            };
            Ok(ChatMessage::user(format!("Frame {} of 3:\n{text}", index + 1)))
        }
        RenderStyle::Raster => {
            let RenderedFrame::Raster(png) = render_frame(frame, RenderStyle::Raster) else {
                unreachable!("raster style renders png");
            };
            let mut message = ChatMessage::user(format!("Frame {} of 3 is attached.", index + 1));
            message
                .images
                .push(ImageAttachment::from_png(format!("frame-{}", index + 1), png));
            Ok(message)
        }
    }
}

/// Chain-of-thought frame descriptions: each frame is described with every
/// earlier frame's description already in the conversation.
pub fn describe_frames(
    task: &EvalTask,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<[String; 3], EvalError> {
    let intro = prompts
        .render("describe_frames", &[("n", "3")])
        .map_err(|e| EvalError::Prompt(e.to_string()))?;
    let mut messages = vec![ChatMessage::system(intro)];
    let mut descriptions = Vec::with_capacity(3);
    for index in 0..3 {
        messages.push(frame_message(task, index)?);
        let request = ChatRequest::new(Role::Vlm, messages.clone());
        let (doc, _) = gateway.complete_structured(&request, &describe_schema())?;
        let description = doc["description"].as_str().unwrap_or_default().to_string();
        messages.push(ChatMessage::assistant(
            serde_json::json!({ "description": description }).to_string(),
        ));
        descriptions.push(description);
    }
    Ok(descriptions.try_into().expect("exactly three descriptions"))
}

fn descriptions_block(descriptions: &[String; 3]) -> String {
    descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| format!("Frame {}: {d}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ask whether the scene is out of distribution for a driving policy.
pub fn judge_oodness(
    descriptions: &[String; 3],
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<(bool, String), EvalError> {
    let prompt = prompts
        .render("judge_oodness", &[("descriptions", descriptions_block(descriptions).as_str())])
        .map_err(|e| EvalError::Prompt(e.to_string()))?;
    let request = ChatRequest::new(Role::Vlm, vec![ChatMessage::user(prompt)]);
    let (doc, _) = gateway.complete_structured(&request, &verdict_schema())?;
    Ok((
        doc["is_ood"].as_bool().unwrap_or_default(),
        doc["rationale"].as_str().unwrap_or_default().to_string(),
    ))
}

/// Ask for one action out of the discrete set. Returns the raw pick; the
/// caller decides safety by replaying the simulation.
pub fn choose_safe_action(
    descriptions: &[String; 3],
    action_set: &[ActionCommand],
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<(String, String), EvalError> {
    if action_set.is_empty() {
        return Err(EvalError::EmptyActionSet);
    }
    let actions = action_set
        .iter()
        .map(|a| format!("- {}", a.kind))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts
        .render(
            "choose_safe_action",
            &[
                ("actions", actions.as_str()),
                ("descriptions", descriptions_block(descriptions).as_str()),
            ],
        )
        .map_err(|e| EvalError::Prompt(e.to_string()))?;
    let request = ChatRequest::new(Role::Vlm, vec![ChatMessage::user(prompt)]);
    let (doc, _) = gateway.complete_structured(&request, &action_schema())?;
    Ok((
        doc["action"].as_str().unwrap_or_default().trim().to_string(),
        doc["rationale"].as_str().unwrap_or_default().to_string(),
    ))
}

/// Run both tasks for one scenario. Provider failures mark the record
/// unevaluated instead of failing the run; an action pick outside the set
/// counts as unsafe.
pub fn evaluate_task(
    task: &EvalTask,
    catalog: &AssetCatalog,
    action_set: &[ActionCommand],
    prompts: &PromptSet,
    gateway: &Gateway,
    seed: u64,
) -> Result<EvalRecord, EvalError> {
    let mut record = EvalRecord {
        task_id: task.id.clone(),
        ood_category: task.ground_truth.ood_category.clone(),
        model_id: gateway.model_id().to_string(),
        payload_style: task.payload_style,
        frame_descriptions: Vec::new(),
        ood_verdict: None,
        ood_rationale: None,
        chosen_action: None,
        action_rationale: None,
        outcome: None,
        unevaluated: None,
    };

    let descriptions = match describe_frames(task, prompts, gateway) {
        Ok(d) => d,
        Err(EvalError::Gateway(e)) => {
            record.unevaluated = Some(Unevaluated::Describe { error: e.to_string() });
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.frame_descriptions = descriptions.to_vec();

    let (verdict, rationale) = match judge_oodness(&descriptions, prompts, gateway) {
        Ok(v) => v,
        Err(EvalError::Gateway(e)) => {
            record.unevaluated = Some(Unevaluated::Judge { error: e.to_string() });
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.ood_verdict = Some(verdict);
    record.ood_rationale = Some(rationale);

    let (pick, action_rationale) =
        match choose_safe_action(&descriptions, action_set, prompts, gateway) {
            Ok(v) => v,
            Err(EvalError::Gateway(e)) => {
                record.unevaluated = Some(Unevaluated::Act { error: e.to_string() });
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
    record.chosen_action = Some(pick.clone());
    record.action_rationale = Some(action_rationale);

    // out-of-set picks are unsafe by policy; in-set picks are judged by
    // replaying the simulation with that action
    let action_safe = match pick.parse::<ActionKind>() {
        Ok(kind) if action_set.iter().any(|a| a.kind == kind) => {
            let command = action_set
                .iter()
                .find(|a| a.kind == kind)
                .expect("just checked")
                .clone();
            let replay = simulate(&task.config, catalog, seed, &[(0.0, command)])?;
            let safe = replay.collisions().count() == 0;
            debug_assert_eq!(
                safe,
                task.ground_truth.safe_actions.contains(&kind),
                "replay disagrees with the precomputed safe set"
            );
            safe
        }
        _ => false,
    };
    record.outcome = Some(Outcome {
        ood_correct: verdict == task.ground_truth.is_ood,
        action_safe,
    });
    Ok(record)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Aggregate per-category and overall success rates over evaluated records.
/// Unevaluated records are counted separately and excluded from rates.
pub fn aggregate_report(records: &[EvalRecord]) -> Result<SuccessReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let model_id = records[0].model_id.clone();
    let payload_style = records[0].payload_style;
    let mut overall = (0u64, 0u64, 0u64); // ood successes, action successes, total
    let mut per_category: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut unevaluated = 0u64;

    for record in records {
        let Some(outcome) = &record.outcome else {
            unevaluated += 1;
            continue;
        };
        let slot = per_category.entry(record.ood_category.clone()).or_insert((0, 0, 0));
        for (ood, action, total) in [&mut overall, slot] {
            if outcome.ood_correct {
                *ood += 1;
            }
            if outcome.action_safe {
                *action += 1;
            }
            *total += 1;
        }
    }

    Ok(SuccessReport {
        model_id,
        payload_style,
        evaluated: overall.2,
        unevaluated,
        overall_ood: RateLine::new(overall.0, overall.2),
        overall_action: RateLine::new(overall.1, overall.2),
        per_category: per_category
            .into_iter()
            .map(|(category, (ood, action, total))| {
                (category, CategoryRates {
                    ood: RateLine::new(ood, total),
                    action: RateLine::new(action, total),
                })
            })
            .collect(),
    })
}

pub fn write_eval_records(
    path: impl AsRef<Path>,
    records: &[EvalRecord],
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_eval_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EvalError::Parse(e.to_string())))
        .collect()
}
