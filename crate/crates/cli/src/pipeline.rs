//! Staged end-to-end pipeline: tree-init → redteam → prune → generate →
//! metrics → simulate → eval. Every stage reads its inputs from the run
//! directory and writes its outputs back there, so any contiguous subset can
//! be (re)run against an existing directory. The manifest is rewritten after
//! each stage; a crash mid-run leaves a truthful partial record.

use std::path::{Path, PathBuf};

use oodgen_core::catalog::AssetCatalog;
use oodgen_core::corpus::{load_corpus, CorpusFormat, CorpusItem, EmbeddingCache, TextCorpus};
use oodgen_core::eval::{aggregate_report, build_task, evaluate_task, write_eval_records};
use oodgen_core::gateway::{Embedder, Gateway};
use oodgen_core::generation::{
    build_initial_tree, generate_scenario_texts, read_records, run_redteam_loop, write_records,
    PromptSet,
};
use oodgen_core::metrics::{
    baseline_reference_oodness, dataset_diversity, dataset_oodness, filter_by_oodness,
};
use oodgen_core::sim::{
    default_action_set, simulate, synthesize_config, ScenarioConfig, SimulationTrace,
};
use oodgen_core::tree::{prune_to_catalog, read_tree, write_tree};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{derive_run_id, file_sha256, Artifact, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};
use crate::{classify_corpus, classify_eval, classify_generation, classify_sim, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    TreeInit,
    Redteam,
    Prune,
    Generate,
    Metrics,
    Simulate,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::TreeInit,
        Stage::Redteam,
        Stage::Prune,
        Stage::Generate,
        Stage::Metrics,
        Stage::Simulate,
        Stage::Eval,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::TreeInit => "tree-init",
            Stage::Redteam => "redteam",
            Stage::Prune => "prune",
            Stage::Generate => "generate",
            Stage::Metrics => "metrics",
            Stage::Simulate => "simulate",
            Stage::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Parse a comma-separated stage list ("all" for everything). Duplicates
/// collapse; execution order is always the canonical pipeline order.
pub fn parse_stages(spec: &str) -> Result<Vec<Stage>, CliError> {
    if spec.trim() == "all" {
        return Ok(Stage::ALL.to_vec());
    }
    let mut picked = [false; Stage::ALL.len()];
    for part in spec.split(',') {
        let stage: Stage = part
            .trim()
            .parse()
            .map_err(|e: String| CliError::Validation(format!("--stages: {e}")))?;
        picked[Stage::ALL.iter().position(|s| s == &stage).expect("stage is canonical")] = true;
    }
    let stages: Vec<Stage> =
        Stage::ALL.into_iter().zip(picked).filter(|(_, p)| *p).map(|(s, _)| s).collect();
    if stages.is_empty() {
        return Err(CliError::Validation("--stages selected nothing".into()));
    }
    Ok(stages)
}

pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    /// `None` when every selected stage completed and artifacts verified.
    pub failure: Option<CliError>,
}

// Run-directory layout. Paths are recorded in the manifest exactly as below.
const TREE_INITIAL: &str = "trees/initial.json";
const TREE_DIVERSE: &str = "trees/diverse.json";
const TREE_SIMULATABLE: &str = "trees/simulatable.json";
const REDTEAM_LOG: &str = "trees/redteam_log.jsonl";
const DATASET: &str = "dataset.jsonl";
const GENERATION_FAILURES: &str = "generation_failures.json";
const REPORT_OODNESS: &str = "reports/oodness.json";
const REPORT_DIVERSITY: &str = "reports/diversity.json";
const REPORT_REFERENCE: &str = "reports/reference.json";
const REPORT_FILTER: &str = "reports/filter.json";
const EMBED_CACHE: &str = "cache/embeddings.jsonl";
const EVAL_RECORDS: &str = "eval/records.jsonl";
const EVAL_REPORT: &str = "eval/report.json";

fn config_rel(id: &str) -> String {
    format!("sim/configs/{id}.json")
}

fn trace_rel(id: &str) -> String {
    format!("sim/traces/{id}.jsonl")
}

struct Ctx<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    manifest: RunManifest,
    gateway: Option<Gateway>,
    prompts: Option<PromptSet>,
    catalog: Option<AssetCatalog>,
}

impl<'a> Ctx<'a> {
    fn new(config: &'a RunConfig, out: &'a Path) -> Result<Self, CliError> {
        let run_id = derive_run_id(&config.config_sha256, config.run.seed);
        let manifest_path = out.join(MANIFEST_FILE);
        // Rerunning into the same directory with the same config and seed
        // resumes that run's manifest; anything else starts a fresh record.
        let manifest = match RunManifest::load(&manifest_path) {
            Ok(existing) if existing.run_id == run_id => existing,
            _ => {
                let mut m = RunManifest::new(
                    run_id,
                    config.clock().now_rfc3339(),
                    config.config_path.display().to_string(),
                    config.config_sha256.clone(),
                    config.run.seed,
                    config.provider_label(),
                );
                m.model_ids.insert("embedding".into(), config.embedder_model_id());
                m
            }
        };
        Ok(Ctx { config, out, manifest, gateway: None, prompts: None, catalog: None })
    }

    fn seed(&self) -> u64 {
        self.config.run.seed
    }

    fn ensure_gateway(&mut self) -> Result<(), CliError> {
        if self.gateway.is_none() {
            let gateway = self.config.gateway()?;
            self.manifest.model_ids.insert("chat".into(), gateway.model_id().to_string());
            self.gateway = Some(gateway);
        }
        Ok(())
    }

    fn ensure_prompts(&mut self) -> Result<(), CliError> {
        if self.prompts.is_none() {
            self.prompts = Some(self.config.prompts()?);
        }
        Ok(())
    }

    fn ensure_catalog(&mut self) -> Result<(), CliError> {
        if self.catalog.is_none() {
            let path = &self.config.assets.catalog;
            let catalog = AssetCatalog::load(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            self.catalog = Some(catalog);
        }
        Ok(())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Hash a file this stage just wrote and record it as an artifact.
    fn artifact(&self, rel: &str) -> Result<Artifact, CliError> {
        Ok(Artifact { path: rel.to_string(), sha256: file_sha256(&self.path(rel))? })
    }

    /// Load a stage input produced by an earlier stage, with a pointer to the
    /// stage that makes it when it is missing.
    fn require<T>(
        &self,
        rel: &str,
        producer: &str,
        load: impl FnOnce(&Path) -> Result<T, CliError>,
    ) -> Result<T, CliError> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(CliError::Validation(format!(
                "missing {rel} in the run directory — run the `{producer}` stage first"
            )));
        }
        load(&path)
    }
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut text = String::new();
    for item in items {
        text.push_str(
            &serde_json::to_string(item)
                .map_err(|e| CliError::Validation(format!("serialize {}: {e}", path.display())))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Run the selected stages in canonical order against `out_dir`. Stage
/// failures are recorded in the manifest and reported through
/// `PipelineOutcome::failure` rather than as an `Err`; `Err` is reserved for
/// infrastructure problems (unwritable run directory or manifest).
pub fn run_pipeline(
    config: &RunConfig,
    out_dir: &Path,
    stages: &[Stage],
) -> Result<PipelineOutcome, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut ctx = Ctx::new(config, out_dir)?;
    let clock = config.clock();
    let mut failure: Option<CliError> = None;

    for (index, stage) in stages.iter().enumerate() {
        let started_at = clock.now_rfc3339();
        let result = run_stage(&mut ctx, *stage);
        let finished_at = clock.now_rfc3339();
        // A rerun of a stage replaces its old record but keeps its slot.
        let record = |status, artifacts, error| StageRecord {
            name: stage.name().into(),
            status,
            started_at: started_at.clone(),
            finished_at: finished_at.clone(),
            artifacts,
            error,
        };
        match result {
            Ok(artifacts) => {
                upsert_stage(&mut ctx.manifest, record(StageStatus::Completed, artifacts, None));
            }
            Err(e) => {
                upsert_stage(
                    &mut ctx.manifest,
                    record(StageStatus::Failed, Vec::new(), Some(e.to_string())),
                );
                for skipped in &stages[index + 1..] {
                    let now = clock.now_rfc3339();
                    upsert_stage(
                        &mut ctx.manifest,
                        StageRecord {
                            name: skipped.name().into(),
                            status: StageStatus::Skipped,
                            started_at: now.clone(),
                            finished_at: now,
                            artifacts: Vec::new(),
                            error: None,
                        },
                    );
                }
                failure = Some(match e {
                    provider @ CliError::Provider(_) => provider,
                    other => CliError::Partial { stage: stage.name(), message: other.to_string() },
                });
            }
        }
        let manifest_path = ctx.manifest.save_atomic(out_dir)?;
        if failure.is_some() {
            return Ok(PipelineOutcome { manifest: ctx.manifest, manifest_path, failure });
        }
    }

    // Closing invariant: everything the manifest promises is on disk intact.
    let problems = ctx.manifest.verify_artifacts(out_dir);
    if problems.is_empty() {
        ctx.manifest.finished_at = Some(clock.now_rfc3339());
    } else {
        failure = Some(CliError::Partial {
            stage: "artifact-check",
            message: problems.join("; "),
        });
    }
    let manifest_path = ctx.manifest.save_atomic(out_dir)?;
    Ok(PipelineOutcome { manifest: ctx.manifest, manifest_path, failure })
}

fn upsert_stage(manifest: &mut RunManifest, record: StageRecord) {
    match manifest.stages.iter_mut().find(|s| s.name == record.name) {
        Some(slot) => *slot = record,
        None => manifest.stages.push(record),
    }
}

fn run_stage(ctx: &mut Ctx, stage: Stage) -> Result<Vec<Artifact>, CliError> {
    match stage {
        Stage::TreeInit => stage_tree_init(ctx),
        Stage::Redteam => stage_redteam(ctx),
        Stage::Prune => stage_prune(ctx),
        Stage::Generate => stage_generate(ctx),
        Stage::Metrics => stage_metrics(ctx),
        Stage::Simulate => stage_simulate(ctx),
        Stage::Eval => stage_eval(ctx),
    }
}

fn stage_tree_init(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    ctx.ensure_gateway()?;
    ctx.ensure_prompts()?;
    let gateway = ctx.gateway.as_ref().expect("ensured");
    let prompts = ctx.prompts.as_ref().expect("ensured");

    let tree = build_initial_tree(prompts, gateway).map_err(classify_generation)?;
    let path = ctx.path(TREE_INITIAL);
    ensure_parent(&path)?;
    write_tree(&path, &tree).map_err(|e| CliError::Validation(e.to_string()))?;
    ctx.manifest.tree_versions.insert("initial".into(), tree.version);
    Ok(vec![ctx.artifact(TREE_INITIAL)?])
}

fn stage_redteam(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let initial = ctx.require(TREE_INITIAL, "tree-init", |p| {
        read_tree(p).map_err(|e| CliError::Validation(e.to_string()))
    })?;
    ctx.ensure_gateway()?;
    ctx.ensure_prompts()?;
    let gateway = ctx.gateway.as_ref().expect("ensured");
    let prompts = ctx.prompts.as_ref().expect("ensured");

    let (tree, logs) =
        run_redteam_loop(&initial, ctx.config.redteam.iterations, prompts, gateway, ctx.seed())
            .map_err(classify_generation)?;
    let tree_path = ctx.path(TREE_DIVERSE);
    ensure_parent(&tree_path)?;
    write_tree(&tree_path, &tree).map_err(|e| CliError::Validation(e.to_string()))?;
    write_jsonl(&ctx.path(REDTEAM_LOG), &logs)?;
    ctx.manifest.tree_versions.insert("diverse".into(), tree.version);
    Ok(vec![ctx.artifact(TREE_DIVERSE)?, ctx.artifact(REDTEAM_LOG)?])
}

fn stage_prune(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let diverse = ctx.require(TREE_DIVERSE, "redteam", |p| {
        read_tree(p).map_err(|e| CliError::Validation(e.to_string()))
    })?;
    ctx.ensure_catalog()?;
    let catalog = ctx.catalog.as_ref().expect("ensured");

    let pruned = prune_to_catalog(&diverse, catalog).map_err(|e| CliError::Validation(e.to_string()))?;
    let path = ctx.path(TREE_SIMULATABLE);
    ensure_parent(&path)?;
    write_tree(&path, &pruned).map_err(|e| CliError::Validation(e.to_string()))?;
    ctx.manifest.tree_versions.insert("simulatable".into(), pruned.version);
    Ok(vec![ctx.artifact(TREE_SIMULATABLE)?])
}

fn stage_generate(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let tree = ctx.require(TREE_SIMULATABLE, "prune", |p| {
        read_tree(p).map_err(|e| CliError::Validation(e.to_string()))
    })?;
    ctx.ensure_gateway()?;
    ctx.ensure_prompts()?;
    let gateway = ctx.gateway.as_ref().expect("ensured");
    let prompts = ctx.prompts.as_ref().expect("ensured");

    let outcome =
        generate_scenario_texts(&tree, ctx.config.generate.per_path, prompts, gateway, ctx.seed())
            .map_err(classify_generation)?;
    if outcome.records.is_empty() {
        let detail = outcome
            .failures
            .first()
            .map(|f| format!("; first failure on {}: {}", f.rendered, f.error))
            .unwrap_or_default();
        return Err(CliError::Provider(format!("no scenario texts were generated{detail}")));
    }
    write_records(ctx.path(DATASET), &outcome.records).map_err(classify_generation)?;
    let mut artifacts = vec![ctx.artifact(DATASET)?];
    // Per-path failures are non-fatal (the dataset is just thinner), but the
    // run record should not hide them.
    if !outcome.failures.is_empty() {
        write_json_pretty(&ctx.path(GENERATION_FAILURES), &outcome.failures)?;
        artifacts.push(ctx.artifact(GENERATION_FAILURES)?);
    }
    Ok(artifacts)
}

fn stage_metrics(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let records = ctx.require(DATASET, "generate", |p| {
        read_records(p).map_err(classify_generation)
    })?;
    let baseline_path = ctx.config.assets.baseline.as_ref().ok_or_else(|| {
        CliError::Validation("the metrics stage needs assets.baseline in the config".into())
    })?;
    let baseline_corpus = load_corpus(baseline_path, CorpusFormat::Jsonl).map_err(classify_corpus)?;
    let ours_corpus = TextCorpus {
        name: "scenarios".into(),
        items: records
            .iter()
            .map(|r| CorpusItem { id: r.id.clone(), text: r.text.clone() })
            .collect(),
        source_uri: DATASET.into(),
    };

    let cache_path = ctx.path(EMBED_CACHE);
    ensure_parent(&cache_path)?;
    let mut cache = EmbeddingCache::open(&cache_path).map_err(classify_corpus)?;
    let embedder = ctx.config.embedder();
    let ours = get_or_embed_cli(&ours_corpus, &embedder, &mut cache)?;
    let baseline = get_or_embed_cli(&baseline_corpus, &embedder, &mut cache)?;

    let convention = ctx.config.convention()?;
    let m = &ctx.config.metrics;

    let oodness = dataset_oodness(&ours, &baseline, convention)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_json_pretty(&ctx.path(REPORT_OODNESS), &oodness)?;

    let diversity =
        dataset_diversity(&ours).map_err(|e| CliError::Validation(e.to_string()))?;
    write_json_pretty(&ctx.path(REPORT_DIVERSITY), &diversity)?;

    let reference = baseline_reference_oodness(
        &baseline,
        m.reference_batch,
        m.reference_repeats,
        ctx.seed(),
        convention,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    write_json_pretty(&ctx.path(REPORT_REFERENCE), &reference)?;

    let mut artifacts = vec![
        ctx.artifact(REPORT_OODNESS)?,
        ctx.artifact(REPORT_DIVERSITY)?,
        ctx.artifact(REPORT_REFERENCE)?,
    ];
    if let (Some(lower), Some(upper)) = (m.filter_lower, m.filter_upper) {
        let outcome = filter_by_oodness(&ours, &baseline, lower, upper, convention)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        write_json_pretty(&ctx.path(REPORT_FILTER), &outcome)?;
        artifacts.push(ctx.artifact(REPORT_FILTER)?);
    }
    Ok(artifacts)
}

fn get_or_embed_cli(
    corpus: &TextCorpus,
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
) -> Result<oodgen_core::metrics::EmbeddedDataset, CliError> {
    oodgen_core::corpus::get_or_embed(corpus, embedder, cache).map_err(classify_corpus)
}

fn stage_simulate(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let records = ctx.require(DATASET, "generate", |p| {
        read_records(p).map_err(classify_generation)
    })?;
    ctx.ensure_catalog()?;
    ctx.ensure_gateway()?;
    ctx.ensure_prompts()?;
    let catalog = ctx.catalog.as_ref().expect("ensured");
    let gateway = ctx.gateway.as_ref().expect("ensured");
    let prompts = ctx.prompts.as_ref().expect("ensured");

    let mut artifacts = Vec::with_capacity(records.len() * 2);
    for record in &records {
        let config = synthesize_config(record, catalog, prompts, gateway).map_err(classify_sim)?;
        let config_rel = config_rel(&record.id);
        let config_path = ctx.path(&config_rel);
        ensure_parent(&config_path)?;
        config.save(&config_path).map_err(classify_sim)?;
        artifacts.push(ctx.artifact(&config_rel)?);

        let trace = simulate(&config, catalog, ctx.seed(), &[]).map_err(classify_sim)?;
        let trace_rel = trace_rel(&record.id);
        let trace_path = ctx.path(&trace_rel);
        ensure_parent(&trace_path)?;
        trace.save(&trace_path).map_err(classify_sim)?;
        artifacts.push(ctx.artifact(&trace_rel)?);
    }
    Ok(artifacts)
}

fn stage_eval(ctx: &mut Ctx) -> Result<Vec<Artifact>, CliError> {
    let records = ctx.require(DATASET, "generate", |p| {
        read_records(p).map_err(classify_generation)
    })?;
    ctx.ensure_catalog()?;
    ctx.ensure_gateway()?;
    ctx.ensure_prompts()?;
    let catalog = ctx.catalog.as_ref().expect("ensured");
    let gateway = ctx.gateway.as_ref().expect("ensured");
    let prompts = ctx.prompts.as_ref().expect("ensured");
    let action_set = default_action_set();
    let payload = ctx.config.payload_style()?;

    // Tasks run sequentially in dataset order: scripted mock replies are
    // position-sensitive, and ordered runs stay reproducible.
    let mut eval_records = Vec::with_capacity(records.len());
    for record in &records {
        let config_rel = config_rel(&record.id);
        let trace_rel = trace_rel(&record.id);
        let config = ctx.require(&config_rel, "simulate", |p| {
            ScenarioConfig::load(p).map_err(classify_sim)
        })?;
        let trace = ctx.require(&trace_rel, "simulate", |p| {
            SimulationTrace::load(p).map_err(classify_sim)
        })?;
        // Everything the generator emits is out-of-distribution by
        // construction; the judged model does not get to know that.
        let task = build_task(
            &record.id,
            &config,
            &trace,
            catalog,
            &action_set,
            true,
            payload,
            ctx.seed(),
        )
        .map_err(classify_eval)?;
        eval_records
            .push(evaluate_task(&task, catalog, &action_set, prompts, gateway, ctx.seed())
                .map_err(classify_eval)?);
    }

    let records_path = ctx.path(EVAL_RECORDS);
    ensure_parent(&records_path)?;
    write_eval_records(&records_path, &eval_records).map_err(classify_eval)?;
    let report = aggregate_report(&eval_records).map_err(classify_eval)?;
    report.save(ctx.path(EVAL_REPORT)).map_err(classify_eval)?;
    Ok(vec![ctx.artifact(EVAL_RECORDS)?, ctx.artifact(EVAL_REPORT)?])
}

/// Relative artifact paths for one scenario id, exposed for tests and the
/// one-off `sim`/`eval` subcommands.
pub fn scenario_artifact_paths(id: &str) -> (String, String) {
    (config_rel(id), trace_rel(id))
}
