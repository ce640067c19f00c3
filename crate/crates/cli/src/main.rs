//! `oodgen` — generate OOD driving scenarios, measure them, run them in the
//! built-in simulator, and judge models on them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oodgen_cli::config::RunConfig;
use oodgen_cli::pipeline::{
    ensure_parent, parse_stages, run_pipeline, scenario_artifact_paths, write_json_pretty,
    write_jsonl, Stage,
};
use oodgen_cli::{
    classify_corpus, classify_eval, classify_generation, classify_sim, CliError,
};
use oodgen_core::corpus::{load_corpus, CorpusFormat, CorpusItem, EmbeddingCache, TextCorpus};
use oodgen_core::eval::{aggregate_report, build_task, evaluate_task, read_eval_records, write_eval_records};
use oodgen_core::generation::{
    build_initial_tree, generate_scenario_texts, read_records, run_redteam_loop, write_records,
};
use oodgen_core::metrics::{
    baseline_reference_oodness, dataset_diversity, dataset_oodness, filter_by_oodness,
    EmbeddedDataset,
};
use oodgen_core::sim::{
    carla_document_to_json, default_action_set, export_carla_config, render_frame, simulate,
    synthesize_config, ActionCommand, ActionKind, RenderStyle, RenderedFrame, ScenarioConfig,
    SimulationTrace,
};
use oodgen_core::tree::{prune_to_catalog, read_tree, write_tree, ScenarioTree};
use oodgen_core::catalog::AssetCatalog;

#[derive(Parser)]
#[command(
    name = "oodgen",
    version,
    about = "Out-of-distribution driving scenarios: generate, measure, simulate, evaluate"
)]
struct Cli {
    /// Override the seed from the config file for this invocation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario-tree construction and maintenance.
    #[command(subcommand)]
    Tree(TreeCmd),
    /// Scenario text generation.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Embedding-space OOD-ness and diversity measurements.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Scene synthesis and the deterministic traffic simulator.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Model evaluation on simulated scenes.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// The staged end-to-end pipeline.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration TOML.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum TreeCmd {
    /// Ask the tree model for a fresh scenario tree.
    Init {
        #[command(flatten)]
        config: ConfigArg,
        /// Where to write the tree JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Red-team an existing tree to grow coverage.
    Refine {
        #[command(flatten)]
        config: ConfigArg,
        /// Tree to refine.
        #[arg(long)]
        tree: PathBuf,
        /// Red-team iterations; defaults to the config value.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSONL log of what each iteration did.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Drop subtrees the asset catalog cannot stage.
    Prune {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tree: PathBuf,
        /// Asset catalog; defaults to the one in the config.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List every root-to-leaf path of a tree.
    Paths {
        #[arg(long)]
        tree: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Generate scenario texts along every path of a tree.
    Scenarios {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tree: PathBuf,
        /// Scenarios per path; defaults to the config value.
        #[arg(long)]
        per_path: Option<usize>,
        /// Output dataset (JSONL, one scenario per line).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MetricsIo {
    #[command(flatten)]
    config: ConfigArg,
    /// Scenario dataset (JSONL) to score.
    #[arg(long)]
    dataset: PathBuf,
    /// In-distribution caption corpus; defaults to the config value.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Embedding cache file (reused across invocations when given).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// How far the dataset sits from the in-distribution baseline.
    Oodness {
        #[command(flatten)]
        io: MetricsIo,
    },
    /// How spread out the dataset is internally.
    Diversity {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Baseline-vs-itself OOD-ness: the floor a generator must beat.
    Reference {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Held-out batch size per repeat; defaults to the config value.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Keep scenarios whose OOD-ness lies inside [lower, upper].
    Filter {
        #[command(flatten)]
        io: MetricsIo,
        // scores are usually negative, so accept leading hyphens
        #[arg(long, allow_hyphen_values = true)]
        lower: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        upper: Option<f64>,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Turn one scenario text into an executable scene configuration.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        /// Scenario id within the dataset.
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scene configuration through the simulator.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Scene configuration JSON.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ego action `kind` or `kind@seconds`, repeatable
        /// (keep_lane, change_left, change_right, brake_stop, slow_down, emergency_stop).
        #[arg(long = "action")]
        actions: Vec<String>,
    },
    /// Write a scene as a CARLA-style scenario document.
    ExportCarla {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one frame of a trace as text art or a PNG.
    Render {
        /// Simulation trace (JSONL).
        #[arg(long)]
        trace: PathBuf,
        /// Frame index, 0-based.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value = "text")]
        style: RenderStyle,
        /// Output file; text renders print to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Judge a model over every scenario of a finished simulation run.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Pipeline run directory holding dataset.jsonl and sim/ outputs.
        #[arg(long)]
        run_dir: PathBuf,
        /// Per-task records (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Aggregated success-rate report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Re-aggregate an existing record file into a report.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run the staged pipeline into a run directory.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Run directory for artifacts and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated stage subset, canonical order:
        /// tree-init,redteam,prune,generate,metrics,simulate,eval — or "all".
        #[arg(long, default_value = "all")]
        stages: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Tree(cmd) => run_tree(cmd, seed),
        Command::Gen(cmd) => run_gen(cmd, seed),
        Command::Metrics(cmd) => run_metrics(cmd, seed),
        Command::Sim(cmd) => run_sim(cmd, seed),
        Command::Eval(cmd) => run_eval(cmd, seed),
        Command::Pipeline(cmd) => run_pipeline_cmd(cmd, seed),
    }
}

fn load_tree_arg(path: &PathBuf) -> Result<ScenarioTree, CliError> {
    read_tree(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn save_tree_arg(path: &PathBuf, tree: &ScenarioTree) -> Result<(), CliError> {
    ensure_parent(path)?;
    write_tree(path, tree).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn run_tree(cmd: TreeCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        TreeCmd::Init { config, out } => {
            let config = load_config(&config.config, seed)?;
            let tree = build_initial_tree(&config.prompts()?, &config.gateway()?)
                .map_err(classify_generation)?;
            save_tree_arg(&out, &tree)?;
            println!("wrote {} ({} nodes, version {})", out.display(), tree.node_count(), tree.version);
        }
        TreeCmd::Refine { config, tree, iterations, out, log } => {
            let config = load_config(&config.config, seed)?;
            let input = load_tree_arg(&tree)?;
            let iterations = iterations.unwrap_or(config.redteam.iterations);
            let (refined, logs) = run_redteam_loop(
                &input,
                iterations,
                &config.prompts()?,
                &config.gateway()?,
                config.run.seed,
            )
            .map_err(classify_generation)?;
            save_tree_arg(&out, &refined)?;
            if let Some(log) = log {
                write_jsonl(&log, &logs)?;
            }
            println!(
                "wrote {} ({} -> {} nodes over {} iterations, version {})",
                out.display(),
                input.node_count(),
                refined.node_count(),
                iterations,
                refined.version
            );
        }
        TreeCmd::Prune { config, tree, catalog, out } => {
            let config = load_config(&config.config, seed)?;
            let catalog_path = catalog.unwrap_or(config.assets.catalog.clone());
            let catalog = AssetCatalog::load(&catalog_path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", catalog_path.display())))?;
            let input = load_tree_arg(&tree)?;
            let pruned = prune_to_catalog(&input, &catalog)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            save_tree_arg(&out, &pruned)?;
            println!(
                "wrote {} ({} -> {} nodes, {} paths)",
                out.display(),
                input.node_count(),
                pruned.node_count(),
                pruned.enumerate_paths().map_err(|e| CliError::Validation(e.to_string()))?.len()
            );
        }
        TreeCmd::Paths { tree } => {
            let input = load_tree_arg(&tree)?;
            let paths =
                input.enumerate_paths().map_err(|e| CliError::Validation(e.to_string()))?;
            for path in &paths {
                println!("{}\t{}", path.node_ids.last().expect("paths are never empty"), path.rendered);
            }
            println!("{} paths", paths.len());
        }
    }
    Ok(())
}

fn run_gen(cmd: GenCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        GenCmd::Scenarios { config, tree, per_path, out } => {
            let config = load_config(&config.config, seed)?;
            let input = load_tree_arg(&tree)?;
            let per_path = per_path.unwrap_or(config.generate.per_path);
            let outcome = generate_scenario_texts(
                &input,
                per_path,
                &config.prompts()?,
                &config.gateway()?,
                config.run.seed,
            )
            .map_err(classify_generation)?;
            ensure_parent(&out)?;
            write_records(&out, &outcome.records).map_err(classify_generation)?;
            println!("wrote {} ({} scenarios)", out.display(), outcome.records.len());
            for failure in &outcome.failures {
                eprintln!("warning: {}: {}", failure.rendered, failure.error);
            }
        }
    }
    Ok(())
}

/// Embed a scenario dataset (JSONL of generated records) with the configured
/// backend, via an on-disk cache when one is supplied.
fn embed_records(
    config: &RunConfig,
    dataset: &PathBuf,
    cache: Option<PathBuf>,
) -> Result<EmbeddedDataset, CliError> {
    let records = read_records(dataset).map_err(classify_generation)?;
    let corpus = TextCorpus {
        name: "scenarios".into(),
        items: records
            .into_iter()
            .map(|r| CorpusItem { id: r.id, text: r.text })
            .collect(),
        source_uri: dataset.display().to_string(),
    };
    embed_corpus(config, &corpus, cache)
}

fn embed_corpus(
    config: &RunConfig,
    corpus: &TextCorpus,
    cache: Option<PathBuf>,
) -> Result<EmbeddedDataset, CliError> {
    let mut cache = match cache {
        Some(path) => {
            ensure_parent(&path)?;
            EmbeddingCache::open(&path).map_err(classify_corpus)?
        }
        None => EmbeddingCache::in_memory(),
    };
    oodgen_core::corpus::get_or_embed(corpus, &config.embedder(), &mut cache)
        .map_err(classify_corpus)
}

fn load_baseline(
    config: &RunConfig,
    flag: Option<PathBuf>,
    cache: Option<PathBuf>,
) -> Result<EmbeddedDataset, CliError> {
    let path = flag.or(config.assets.baseline.clone()).ok_or_else(|| {
        CliError::Validation("no baseline corpus: pass --baseline or set assets.baseline".into())
    })?;
    let corpus = load_corpus(&path, CorpusFormat::Jsonl).map_err(classify_corpus)?;
    embed_corpus(config, &corpus, cache)
}

fn run_metrics(cmd: MetricsCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        MetricsCmd::Oodness { io } => {
            let config = load_config(&io.config.config, seed)?;
            let ours = embed_records(&config, &io.dataset, io.cache.clone())?;
            let baseline = load_baseline(&config, io.baseline, io.cache)?;
            let report = dataset_oodness(&ours, &baseline, config.convention()?)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_json_pretty(&io.out, &report)?;
            println!("oodness {:.6} over {} samples -> {}", report.aggregate, report.per_sample.len(), io.out.display());
        }
        MetricsCmd::Diversity { config, dataset, out, cache } => {
            let config = load_config(&config.config, seed)?;
            let ours = embed_records(&config, &dataset, cache)?;
            let report =
                dataset_diversity(&ours).map_err(|e| CliError::Validation(e.to_string()))?;
            write_json_pretty(&out, &report)?;
            println!("diversity {:.6} over {} samples -> {}", report.aggregate, report.per_sample.len(), out.display());
        }
        MetricsCmd::Reference { config, baseline, batch, repeats, out, cache } => {
            let config = load_config(&config.config, seed)?;
            let base = load_baseline(&config, baseline, cache)?;
            let report = baseline_reference_oodness(
                &base,
                batch.unwrap_or(config.metrics.reference_batch),
                repeats.unwrap_or(config.metrics.reference_repeats),
                config.run.seed,
                config.convention()?,
            )
            .map_err(|e| CliError::Validation(e.to_string()))?;
            write_json_pretty(&out, &report)?;
            println!("reference oodness {:.6} -> {}", report.value, out.display());
        }
        MetricsCmd::Filter { io, lower, upper } => {
            let config = load_config(&io.config.config, seed)?;
            let lower = lower.or(config.metrics.filter_lower).ok_or_else(|| {
                CliError::Validation("no lower bound: pass --lower or set metrics.filter_lower".into())
            })?;
            let upper = upper.or(config.metrics.filter_upper).ok_or_else(|| {
                CliError::Validation("no upper bound: pass --upper or set metrics.filter_upper".into())
            })?;
            let ours = embed_records(&config, &io.dataset, io.cache.clone())?;
            let baseline = load_baseline(&config, io.baseline, io.cache)?;
            let outcome = filter_by_oodness(&ours, &baseline, lower, upper, config.convention()?)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_json_pretty(&io.out, &outcome)?;
            println!(
                "kept {} / rejected {} low, {} high -> {}",
                outcome.kept.len(),
                outcome.rejected_low.len(),
                outcome.rejected_high.len(),
                io.out.display()
            );
        }
    }
    Ok(())
}

fn parse_action(spec: &str) -> Result<(f64, ActionCommand), CliError> {
    let (kind, at) = match spec.split_once('@') {
        Some((kind, at)) => {
            let at: f64 = at.parse().map_err(|_| {
                CliError::Validation(format!("bad action time in `{spec}` (want kind@seconds)"))
            })?;
            (kind, at)
        }
        None => (spec, 0.0),
    };
    let kind: ActionKind = kind.parse().map_err(CliError::Validation)?;
    Ok((at, ActionCommand::of(kind)))
}

fn run_sim(cmd: SimCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        SimCmd::Synth { config, dataset, id, out } => {
            let config = load_config(&config.config, seed)?;
            let records = read_records(&dataset).map_err(classify_generation)?;
            let record = records.iter().find(|r| r.id == id).ok_or_else(|| {
                CliError::Validation(format!("no scenario `{id}` in {}", dataset.display()))
            })?;
            let catalog = AssetCatalog::load(&config.assets.catalog)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let scene = synthesize_config(record, &catalog, &config.prompts()?, &config.gateway()?)
                .map_err(classify_sim)?;
            ensure_parent(&out)?;
            scene.save(&out).map_err(classify_sim)?;
            println!("wrote {} (map {}, {} actors)", out.display(), scene.map_id, scene.actors.len());
        }
        SimCmd::Run { config, scene, out, actions } => {
            let config = load_config(&config.config, seed)?;
            let catalog = AssetCatalog::load(&config.assets.catalog)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let scene = ScenarioConfig::load(&scene).map_err(classify_sim)?;
            let mut plan = actions
                .iter()
                .map(|s| parse_action(s))
                .collect::<Result<Vec<_>, _>>()?;
            plan.sort_by(|a, b| a.0.total_cmp(&b.0));
            let trace =
                simulate(&scene, &catalog, config.run.seed, &plan).map_err(classify_sim)?;
            ensure_parent(&out)?;
            trace.save(&out).map_err(classify_sim)?;
            let collisions = trace.collisions().count();
            println!(
                "wrote {} ({} frames, {} collision events)",
                out.display(),
                trace.frames.len(),
                collisions
            );
        }
        SimCmd::ExportCarla { scene, out } => {
            let scene = ScenarioConfig::load(&scene).map_err(classify_sim)?;
            let doc = export_carla_config(&scene);
            ensure_parent(&out)?;
            std::fs::write(&out, carla_document_to_json(&doc))
                .map_err(|e| CliError::io(&out, e))?;
            println!("wrote {}", out.display());
        }
        SimCmd::Render { trace, frame, style, out } => {
            let trace = SimulationTrace::load(&trace).map_err(classify_sim)?;
            let selected = trace.frames.get(frame).ok_or_else(|| {
                CliError::Validation(format!(
                    "frame {frame} out of range (trace has {})",
                    trace.frames.len()
                ))
            })?;
            match (render_frame(selected, style), out) {
                (RenderedFrame::Text(text), None) => print!("{text}"),
                (RenderedFrame::Text(text), Some(out)) => {
                    ensure_parent(&out)?;
                    std::fs::write(&out, text).map_err(|e| CliError::io(&out, e))?;
                    println!("wrote {}", out.display());
                }
                (RenderedFrame::Raster(png), Some(out)) => {
                    ensure_parent(&out)?;
                    std::fs::write(&out, png).map_err(|e| CliError::io(&out, e))?;
                    println!("wrote {}", out.display());
                }
                (RenderedFrame::Raster(_), None) => {
                    return Err(CliError::Validation(
                        "raster rendering needs --out (refusing to print PNG bytes)".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn run_eval(cmd: EvalCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        EvalCmd::Run { config, run_dir, out, report } => {
            let config = load_config(&config.config, seed)?;
            let catalog = AssetCatalog::load(&config.assets.catalog)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let records = read_records(run_dir.join("dataset.jsonl")).map_err(classify_generation)?;
            let prompts = config.prompts()?;
            let gateway = config.gateway()?;
            let action_set = default_action_set();
            let payload = config.payload_style()?;

            let mut eval_records = Vec::with_capacity(records.len());
            for record in &records {
                let (config_rel, trace_rel) = scenario_artifact_paths(&record.id);
                let scene =
                    ScenarioConfig::load(run_dir.join(config_rel)).map_err(classify_sim)?;
                let trace =
                    SimulationTrace::load(run_dir.join(trace_rel)).map_err(classify_sim)?;
                let task = build_task(
                    &record.id,
                    &scene,
                    &trace,
                    &catalog,
                    &action_set,
                    true,
                    payload,
                    config.run.seed,
                )
                .map_err(classify_eval)?;
                eval_records.push(
                    evaluate_task(&task, &catalog, &action_set, &prompts, &gateway, config.run.seed)
                        .map_err(classify_eval)?,
                );
            }
            ensure_parent(&out)?;
            write_eval_records(&out, &eval_records).map_err(classify_eval)?;
            let summary = aggregate_report(&eval_records).map_err(classify_eval)?;
            ensure_parent(&report)?;
            summary.save(&report).map_err(classify_eval)?;
            println!(
                "ood recognition {}/{} ({}%), safe action {}/{} ({}%) -> {}",
                summary.overall_ood.successes,
                summary.overall_ood.total,
                summary.overall_ood.percent,
                summary.overall_action.successes,
                summary.overall_action.total,
                summary.overall_action.percent,
                report.display()
            );
        }
        EvalCmd::Report { records, out } => {
            let eval_records = read_eval_records(&records).map_err(classify_eval)?;
            let summary = aggregate_report(&eval_records).map_err(classify_eval)?;
            ensure_parent(&out)?;
            summary.save(&out).map_err(classify_eval)?;
            println!(
                "ood recognition {}/{} ({}%), safe action {}/{} ({}%) -> {}",
                summary.overall_ood.successes,
                summary.overall_ood.total,
                summary.overall_ood.percent,
                summary.overall_action.successes,
                summary.overall_action.total,
                summary.overall_action.percent,
                out.display()
            );
        }
    }
    Ok(())
}

fn run_pipeline_cmd(cmd: PipelineCmd, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        PipelineCmd::Run { config, out, stages } => {
            let config = load_config(&config.config, seed)?;
            let stages: Vec<Stage> = parse_stages(&stages)?;
            let outcome = run_pipeline(&config, &out, &stages)?;
            for stage in &outcome.manifest.stages {
                match &stage.error {
                    Some(error) => println!("{}: {:?} ({error})", stage.name, stage.status),
                    None => println!(
                        "{}: {:?} ({} artifacts)",
                        stage.name,
                        stage.status,
                        stage.artifacts.len()
                    ),
                }
            }
            println!("manifest: {}", outcome.manifest_path.display());
            if let Some(failure) = outcome.failure {
                return Err(failure);
            }
        }
    }
    Ok(())
}
