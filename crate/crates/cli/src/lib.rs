//! Library half of the `oodgen` binary: run configuration, manifests, and the
//! staged pipeline. Kept as a library so integration tests can drive complete
//! runs in-process.

use oodgen_core::corpus::CorpusError;
use oodgen_core::eval::EvalError;
use oodgen_core::gateway::GatewayError;
use oodgen_core::generation::GenerationError;
use oodgen_core::sim::SimError;

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use pipeline::{run_pipeline, PipelineOutcome, Stage};

/// Everything a subcommand can fail with, classified for exit codes:
/// 2 = validation (bad config, bad input, core-side invariant refusal),
/// 3 = provider (auth, transport, exhausted mock script, unusable replies),
/// 4 = pipeline ran but did not complete every selected stage.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("provider: {0}")]
    Provider(String),
    #[error("pipeline incomplete: stage `{stage}` failed: {message}")]
    Partial { stage: &'static str, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Provider(_) => 3,
            CliError::Partial { .. } => 4,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

/// Failures caused by the model or the wire, as opposed to our own inputs.
fn gateway_is_provider_class(e: &GatewayError) -> bool {
    matches!(
        e,
        GatewayError::Auth(_)
            | GatewayError::RateLimited { .. }
            | GatewayError::Timeout(_)
            | GatewayError::Transport(_)
            | GatewayError::Provider { .. }
            | GatewayError::ScriptExhausted { .. }
            | GatewayError::StructuredExtraction { .. }
    )
}

pub fn classify_gateway(e: GatewayError) -> CliError {
    if gateway_is_provider_class(&e) {
        CliError::Provider(e.to_string())
    } else {
        CliError::Validation(e.to_string())
    }
}

pub fn classify_generation(e: GenerationError) -> CliError {
    match e {
        GenerationError::Gateway(g) => classify_gateway(g),
        // a reply that parsed but wasn't a usable document is the model's fault
        GenerationError::BadDocument { .. } => CliError::Provider(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn classify_sim(e: SimError) -> CliError {
    match e {
        SimError::Gateway(g) => classify_gateway(g),
        SimError::BadDocument(_) => CliError::Provider(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn classify_eval(e: EvalError) -> CliError {
    match e {
        EvalError::Gateway(g) => classify_gateway(g),
        EvalError::Sim(s) => classify_sim(s),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn classify_corpus(e: CorpusError) -> CliError {
    match e {
        CorpusError::Gateway(g) => classify_gateway(g),
        other => CliError::Validation(other.to_string()),
    }
}
