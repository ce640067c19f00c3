//! The generation pipeline: initial tree construction, red-team refinement,
//! and scenario-text generation along tree paths.
//!
//! Prompt templates are versioned repo assets (`prompts/*.txt`) with
//! `{{placeholder}}` interpolation. They are tunable inputs, not ground
//! truth; nothing downstream asserts on their wording.

use crate::gateway::{
    extract::SchemaNode, ChatMessage, ChatRequest, Gateway, GatewayError, JsonSchema, Role,
};
use crate::sha256_hex;
use crate::tree::{
    deserialize_tree, serialize_tree, Category, NodeId, ScenarioTree, TreeEdit, TreeError,
    TreePath,
};
use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How a generated scenario came to be.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedBy {
    pub role: Role,
    pub model_id: String,
}

/// One textual OOD scenario plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub text: String,
    /// Tree path that produced the record; red-team proposals have none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<TreePath>,
    pub category: Category,
    pub created_by: CreatedBy,
    pub tree_version: u64,
}

impl ScenarioRecord {
    pub fn validate(&self, tree: &ScenarioTree) -> Result<(), GenerationError> {
        if self.text.trim().is_empty() {
            return Err(GenerationError::EmptyText);
        }
        if let Some(path) = &self.path {
            if !tree.contains_path(&path.node_ids) {
                return Err(GenerationError::UnknownPath(path.rendered.clone()));
            }
            if tree.path_category(path) != Some(self.category) {
                return Err(GenerationError::CategoryMismatch {
                    record: self.id.clone(),
                    category: self.category,
                });
            }
        }
        Ok(())
    }
}

/// What one red-team iteration did to the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterationOutcome {
    MatchedPath { rendered: String },
    AppliedEdit { edit: TreeEdit },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedTeamLog {
    pub iteration: usize,
    pub proposal: String,
    pub outcome: IterationOutcome,
    pub nodes_before: usize,
    pub nodes_after: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("scenario text must be non-empty")]
    EmptyText,
    #[error("record references a path not in the tree: {0}")]
    UnknownPath(String),
    #[error("record `{record}` category {category} does not match its path's branch")]
    CategoryMismatch { record: String, category: Category },
    #[error("matched node ids do not form a root-to-leaf path: {0:?}")]
    BadMatch(Vec<NodeId>),
    #[error("model reply was not a valid {what}: {message}")]
    BadDocument { what: &'static str, message: String },
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("unresolved placeholder `{placeholder}` in template `{template}`")]
    UnresolvedPlaceholder { template: String, placeholder: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Named prompt templates. Lines starting with `#` at the top of a template
/// are asset provenance notes and are stripped before use.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: IndexMap<String, String>,
    /// Content hash over all templates; recorded in run manifests.
    pub version: String,
}

const BUILTIN_PROMPTS: &[(&str, &str)] = &[
    ("tree_concept", include_str!("../prompts/tree_concept.txt")),
    ("tree_classify", include_str!("../prompts/tree_classify.txt")),
    ("tree_emit", include_str!("../prompts/tree_emit.txt")),
    ("redteam_propose", include_str!("../prompts/redteam_propose.txt")),
    ("tree_refine", include_str!("../prompts/tree_refine.txt")),
    ("scenario_generate", include_str!("../prompts/scenario_generate.txt")),
    ("classify_scenario", include_str!("../prompts/classify_scenario.txt")),
    ("synthesize_config", include_str!("../prompts/synthesize_config.txt")),
    ("describe_frames", include_str!("../prompts/describe_frames.txt")),
    ("judge_oodness", include_str!("../prompts/judge_oodness.txt")),
    ("choose_safe_action", include_str!("../prompts/choose_safe_action.txt")),
];

fn strip_header(raw: &str) -> String {
    let mut lines = raw.lines().peekable();
    while matches!(lines.peek(), Some(l) if l.starts_with('#')) {
        lines.next();
    }
    lines.collect::<Vec<_>>().join("\n").trim().to_string()
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates: IndexMap<String, String> = BUILTIN_PROMPTS
            .iter()
            .map(|(name, raw)| (name.to_string(), strip_header(raw)))
            .collect();
        PromptSet::from_templates(templates)
    }
}

impl PromptSet {
    fn from_templates(templates: IndexMap<String, String>) -> Self {
        let mut canon = String::new();
        for (name, body) in &templates {
            canon.push_str(name);
            canon.push('\0');
            canon.push_str(body);
            canon.push('\0');
        }
        let version = sha256_hex(canon.as_bytes());
        PromptSet { templates, version }
    }

    /// Load `<name>.txt` templates from a directory, overriding built-ins
    /// per name. Unknown extra templates are allowed.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, GenerationError> {
        let dir = dir.as_ref();
        let mut templates = PromptSet::default().templates;
        let entries = std::fs::read_dir(dir).map_err(|source| GenerationError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let raw = std::fs::read_to_string(&path).map_err(|source| GenerationError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(name, strip_header(&raw));
        }
        Ok(PromptSet::from_templates(templates))
    }

    /// Interpolate `{{key}}` placeholders. Leftover placeholders are errors:
    /// they mean the call site and template disagree.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, GenerationError> {
        let template = self
            .templates
            .get(name)
            .ok_or_else(|| GenerationError::UnknownTemplate(name.to_string()))?;
        let mut out = template.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        if let Some(start) = out.find("{{") {
            let rest = &out[start + 2..];
            let end = rest.find("}}").unwrap_or(rest.len().min(24));
            return Err(GenerationError::UnresolvedPlaceholder {
                template: name.to_string(),
                placeholder: rest[..end].to_string(),
            });
        }
        Ok(out)
    }
}

fn tree_document_schema() -> JsonSchema {
    JsonSchema::new(
        "tree_document",
        SchemaNode::object(
            vec![
                ("schema_version", SchemaNode::Integer),
                ("version", SchemaNode::Integer),
                ("root", SchemaNode::String),
                (
                    "category_split",
                    SchemaNode::object(
                        vec![
                            ("environmental", SchemaNode::String),
                            ("interactional", SchemaNode::String),
                        ],
                        vec![],
                    ),
                ),
                ("nodes", SchemaNode::Any),
            ],
            vec![("dimensions", SchemaNode::array(SchemaNode::String))],
        ),
    )
}

fn tree_edit_schema() -> JsonSchema {
    JsonSchema::new(
        "tree_edit",
        SchemaNode::object(
            vec![("kind", SchemaNode::one_of(["add_node", "modify_node", "none_matched"]))],
            vec![
                ("parent", SchemaNode::String),
                ("id", SchemaNode::String),
                ("node", SchemaNode::Any),
                ("matched", SchemaNode::array(SchemaNode::String)),
            ],
        ),
    )
}

fn scenario_texts_schema() -> JsonSchema {
    JsonSchema::new(
        "scenario_texts",
        SchemaNode::object(
            vec![("scenarios", SchemaNode::array_min(SchemaNode::String, 1))],
            vec![],
        ),
    )
}

fn classification_schema() -> JsonSchema {
    JsonSchema::new(
        "classification",
        SchemaNode::object(
            vec![("category", SchemaNode::one_of(["environmental", "interactional"]))],
            vec![],
        ),
    )
}

fn dimensions_list(tree_dims: &crate::tree::DimensionSet) -> String {
    tree_dims.0.iter().cloned().collect::<Vec<_>>().join(", ")
}

/// Build the initial scenario tree with a three-stage chain-of-thought
/// conversation: concept with examples, two-way classification, then tree
/// emission as JSON.
pub fn build_initial_tree(
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<ScenarioTree, GenerationError> {
    let dims = crate::tree::DimensionSet::default();
    let stage1 = prompts.render("tree_concept", &[])?;
    let mut messages = vec![ChatMessage::user(stage1)];
    let reply1 = gateway.complete(&ChatRequest::new(Role::TreeLlm, messages.clone()))?;
    messages.push(ChatMessage::assistant(reply1.text));

    let stage2 = prompts.render("tree_classify", &[("dimensions", &dimensions_list(&dims))])?;
    messages.push(ChatMessage::user(stage2));
    let reply2 = gateway.complete(&ChatRequest::new(Role::TreeLlm, messages.clone()))?;
    messages.push(ChatMessage::assistant(reply2.text));

    let dims_json = dims
        .0
        .iter()
        .map(|d| format!("\"{d}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let stage3 = prompts.render("tree_emit", &[("dimensions_json", dims_json.as_str())])?;
    messages.push(ChatMessage::user(stage3));
    let request = ChatRequest::new(Role::TreeLlm, messages);
    let (doc, _) = gateway.complete_structured(&request, &tree_document_schema())?;

    // re-serialize the extracted document and run it through the strict
    // tree parser so id/key mismatches and schema violations surface
    let text = serde_json::to_string(&doc).expect("value serializes");
    let tree = deserialize_tree(&text)?;
    tree.ensure_valid()?;
    Ok(tree)
}

const HISTORY_WINDOW: usize = 32;

/// Ask the red team for one new OOD scenario proposal.
pub fn propose_ood(
    gateway: &Gateway,
    prompts: &PromptSet,
    history: &[String],
    focus: &str,
) -> Result<String, GenerationError> {
    let recent: Vec<&String> = history.iter().rev().take(HISTORY_WINDOW).rev().collect();
    let history_block = recent
        .iter()
        .map(|p| format!("- {p}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts.render(
        "redteam_propose",
        &[("history", history_block.as_str()), ("focus", focus)],
    )?;
    let reply = gateway.complete(&ChatRequest::new(Role::RedLlm, vec![ChatMessage::user(prompt)]))?;
    Ok(reply.text.trim().to_string())
}

/// Show the tree-LLM a proposal and apply whatever edit it returns.
/// `none_matched` must name an existing root-to-leaf path.
pub fn refine_tree(
    tree: &ScenarioTree,
    proposal: &str,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<(ScenarioTree, TreeEdit), GenerationError> {
    tree.ensure_valid()?;
    let prompt = prompts.render(
        "tree_refine",
        &[("tree", serialize_tree(tree).as_str()), ("proposal", proposal)],
    )?;
    let request = ChatRequest::new(Role::TreeLlm, vec![ChatMessage::user(prompt)]);
    let (doc, _) = gateway.complete_structured(&request, &tree_edit_schema())?;
    let edit: TreeEdit = serde_json::from_value(doc).map_err(|e| GenerationError::BadDocument {
        what: "tree edit",
        message: e.to_string(),
    })?;
    if let TreeEdit::NoneMatched { matched } = &edit {
        if !tree.contains_path(matched) {
            return Err(GenerationError::BadMatch(matched.clone()));
        }
    }
    let next = tree.apply_edit(&edit)?;
    Ok((next, edit))
}

/// Run `iterations` red-team rounds sequentially. Per-iteration failures are
/// logged and skipped; authentication and script-exhaustion errors abort.
pub fn run_redteam_loop(
    tree: &ScenarioTree,
    iterations: usize,
    prompts: &PromptSet,
    gateway: &Gateway,
    seed: u64,
) -> Result<(ScenarioTree, Vec<RedTeamLog>), GenerationError> {
    tree.ensure_valid()?;
    let mut current = tree.clone();
    let mut logs = Vec::with_capacity(iterations);
    let mut history: Vec<String> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<String> = current.dimensions.0.iter().cloned().collect();

    for iteration in 0..iterations {
        // nudge the red team toward a random dimension each round
        let focus = &dims[rng.random_range(0..dims.len())];
        let nodes_before = current.node_count();
        let proposal = match propose_ood(gateway, prompts, &history, focus) {
            Ok(p) => p,
            Err(e) => {
                if fatal(&e) {
                    return Err(e);
                }
                logs.push(RedTeamLog {
                    iteration,
                    proposal: String::new(),
                    outcome: IterationOutcome::Failed { error: e.to_string() },
                    nodes_before,
                    nodes_after: nodes_before,
                });
                continue;
            }
        };
        history.push(proposal.clone());
        match refine_tree(&current, &proposal, prompts, gateway) {
            Ok((next, edit)) => {
                let outcome = match &edit {
                    TreeEdit::NoneMatched { matched } => IterationOutcome::MatchedPath {
                        rendered: current
                            .path_from_ids(matched)
                            .map(|p| p.rendered)
                            .unwrap_or_default(),
                    },
                    other => IterationOutcome::AppliedEdit { edit: other.clone() },
                };
                let nodes_after = next.node_count();
                debug_assert!(nodes_after >= nodes_before);
                current = next;
                logs.push(RedTeamLog { iteration, proposal, outcome, nodes_before, nodes_after });
            }
            Err(e) => {
                if fatal(&e) {
                    return Err(e);
                }
                logs.push(RedTeamLog {
                    iteration,
                    proposal,
                    outcome: IterationOutcome::Failed { error: e.to_string() },
                    nodes_before,
                    nodes_after: nodes_before,
                });
            }
        }
    }
    Ok((current, logs))
}

/// Errors that poison the whole loop rather than one iteration.
fn fatal(e: &GenerationError) -> bool {
    matches!(
        e,
        GenerationError::Gateway(GatewayError::Auth(_))
            | GenerationError::Gateway(GatewayError::ScriptExhausted { .. })
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub leaf_id: NodeId,
    pub rendered: String,
    pub error: String,
}

/// Result of scenario-text generation: records plus per-path failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub records: Vec<ScenarioRecord>,
    pub failures: Vec<PathFailure>,
}

const REGENERATION_ATTEMPTS: usize = 3;

/// Generate `per_path` scenario texts along every root-to-leaf path.
/// Exact-duplicate texts are dropped and regenerated (bounded attempts);
/// paths whose provider calls fail are reported, not fatal.
pub fn generate_scenario_texts(
    tree: &ScenarioTree,
    per_path: usize,
    prompts: &PromptSet,
    gateway: &Gateway,
    seed: u64,
) -> Result<GenerationOutcome, GenerationError> {
    let paths = tree.enumerate_paths()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut seen_texts: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();

    for path in &paths {
        if per_path == 0 {
            break;
        }
        let category = tree
            .path_category(path)
            .expect("valid tree paths pass through a category branch");
        let mut kept: Vec<String> = Vec::new();
        let mut last_error: Option<String> = None;
        for _attempt in 0..REGENERATION_ATTEMPTS {
            if kept.len() >= per_path {
                break;
            }
            let missing = per_path - kept.len();
            let nonce = format!("{:08x}", rng.random::<u32>());
            let prompt = prompts.render(
                "scenario_generate",
                &[
                    ("path", path.rendered.as_str()),
                    ("count", missing.to_string().as_str()),
                    ("nonce", nonce.as_str()),
                ],
            )?;
            let request = ChatRequest::new(Role::TreeLlm, vec![ChatMessage::user(prompt)]);
            match gateway.complete_structured(&request, &scenario_texts_schema()) {
                Ok((doc, _)) => {
                    let texts: Vec<String> = doc["scenarios"]
                        .as_array()
                        .expect("schema checked")
                        .iter()
                        .filter_map(|v| v.as_str().map(str::to_string))
                        .collect();
                    for text in texts {
                        if kept.len() >= per_path {
                            break;
                        }
                        let trimmed = text.trim().to_string();
                        if trimmed.is_empty() || !seen_texts.insert(trimmed.clone()) {
                            continue;
                        }
                        kept.push(trimmed);
                    }
                }
                Err(e) => {
                    if let GatewayError::Auth(_) | GatewayError::ScriptExhausted { .. } = e {
                        return Err(e.into());
                    }
                    last_error = Some(e.to_string());
                    break;
                }
            }
        }
        if kept.len() < per_path {
            failures.push(PathFailure {
                leaf_id: path.leaf_id().clone(),
                rendered: path.rendered.clone(),
                error: last_error.unwrap_or_else(|| {
                    format!(
                        "only {} of {} distinct texts after {} attempts",
                        kept.len(),
                        per_path,
                        REGENERATION_ATTEMPTS
                    )
                }),
            });
        }
        for (k, text) in kept.into_iter().enumerate() {
            records.push(ScenarioRecord {
                id: format!("{}-{:02}", path.leaf_id(), k + 1),
                text,
                path: Some(path.clone()),
                category,
                created_by: CreatedBy {
                    role: Role::TreeLlm,
                    model_id: gateway.model_id().to_string(),
                },
                tree_version: tree.version,
            });
        }
    }
    Ok(GenerationOutcome { records, failures })
}

/// Classify free text into one of the two top-level categories.
pub fn classify_scenario(
    text: &str,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<Category, GenerationError> {
    if text.trim().is_empty() {
        return Err(GenerationError::EmptyText);
    }
    let prompt = prompts.render("classify_scenario", &[("text", text)])?;
    let request = ChatRequest::new(Role::TreeLlm, vec![ChatMessage::user(prompt)]);
    let (doc, _) = gateway.complete_structured(&request, &classification_schema())?;
    match doc["category"].as_str() {
        Some("environmental") => Ok(Category::Environmental),
        Some("interactional") => Ok(Category::Interactional),
        other => Err(GenerationError::BadDocument {
            what: "classification",
            message: format!("unexpected category {other:?}"),
        }),
    }
}

/// Write scenario records as JSON-lines, one record per line.
pub fn write_records(path: impl AsRef<Path>, records: &[ScenarioRecord]) -> Result<(), GenerationError> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| GenerationError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ScenarioRecord>, GenerationError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GenerationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| GenerationError::BadDocument {
                what: "scenario record",
                message: e.to_string(),
            })
        })
        .collect()
}
