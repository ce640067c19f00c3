//! One TOML file drives every subcommand: seeds, providers, embedding
//! backend, asset locations, and per-stage knobs. Relative paths are resolved
//! against the directory holding the config file so runs are relocatable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use oodgen_core::clock::Clock;
use oodgen_core::gateway::{Embedder, Gateway, HashEmbedder, MockProvider};
use oodgen_core::generation::PromptSet;
use oodgen_core::metrics::Convention;
use oodgen_core::sim::RenderStyle;
use oodgen_core::sha256_hex;
use serde::Deserialize;

use crate::{classify_generation, CliError};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub run: RunSection,
    pub providers: ProviderSection,
    pub embedding: EmbeddingSection,
    pub assets: AssetSection,
    #[serde(default)]
    pub redteam: RedteamSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub eval: EvalSection,

    /// sha256 of the raw config file bytes; feeds the run id.
    #[serde(skip)]
    pub config_sha256: String,
    #[serde(skip)]
    pub config_path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Pin manifest timestamps to this unix time; omit for wall-clock.
    #[serde(default)]
    pub fixed_time: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Mock,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    /// Mock reply script, required when mode = "mock".
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// OpenAI-compatible endpoint settings, required when mode = "http".
    #[serde(default)]
    pub http: Option<HttpSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSection {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Only the built-in hashing embedder is wired up here; remote embedding
    /// backends run through the library API.
    pub backend: String,
    #[serde(default = "default_dims")]
    pub dims: usize,
}

fn default_dims() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSection {
    pub catalog: PathBuf,
    /// In-distribution caption corpus (JSONL) for OOD-ness references.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-ins.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedteamSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    10
}

impl Default for RedteamSection {
    fn default() -> Self {
        RedteamSection { iterations: default_iterations() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    #[serde(default = "default_per_path")]
    pub per_path: usize,
}

fn default_per_path() -> usize {
    2
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { per_path: default_per_path() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_convention")]
    pub convention: String,
    #[serde(default = "default_reference_batch")]
    pub reference_batch: usize,
    #[serde(default = "default_reference_repeats")]
    pub reference_repeats: usize,
    /// Optional keep-band for scenario filtering; both ends or neither.
    #[serde(default)]
    pub filter_lower: Option<f64>,
    #[serde(default)]
    pub filter_upper: Option<f64>,
}

fn default_convention() -> String {
    "negated_max".into()
}

fn default_reference_batch() -> usize {
    100
}

fn default_reference_repeats() -> usize {
    10
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            convention: default_convention(),
            reference_batch: default_reference_batch(),
            reference_repeats: default_reference_repeats(),
            filter_lower: None,
            filter_upper: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Scene payload handed to the judged model: "text" or "raster".
    #[serde(default = "default_payload")]
    pub payload: String,
}

fn default_payload() -> String {
    "text".into()
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { payload: default_payload() }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Validation(format!("{}: not utf-8: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        config.config_sha256 = sha256_hex(&bytes);
        config.config_path = path.to_path_buf();

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(script) = &mut config.providers.script {
            *script = resolve(base, script);
        }
        config.assets.catalog = resolve(base, &config.assets.catalog);
        if let Some(b) = &mut config.assets.baseline {
            *b = resolve(base, b);
        }
        if let Some(p) = &mut config.assets.prompts {
            *p = resolve(base, p);
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.providers.mode == ProviderMode::Mock && self.providers.script.is_none() {
            return Err(CliError::Validation(
                "providers.mode = \"mock\" requires providers.script".into(),
            ));
        }
        if self.providers.mode == ProviderMode::Http && self.providers.http.is_none() {
            return Err(CliError::Validation(
                "providers.mode = \"http\" requires a [providers.http] table".into(),
            ));
        }
        if self.embedding.backend != "hash" {
            return Err(CliError::Validation(format!(
                "unsupported embedding backend `{}` (only `hash` is available here)",
                self.embedding.backend
            )));
        }
        if self.embedding.dims == 0 {
            return Err(CliError::Validation("embedding.dims must be positive".into()));
        }
        self.convention()?;
        self.payload_style()?;
        match (self.metrics.filter_lower, self.metrics.filter_upper) {
            (Some(lo), Some(hi)) if lo > hi => {
                return Err(CliError::Validation(format!(
                    "metrics.filter_lower {lo} exceeds filter_upper {hi}"
                )));
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(CliError::Validation(
                    "metrics.filter_lower and filter_upper must be set together".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn convention(&self) -> Result<Convention, CliError> {
        self.metrics
            .convention
            .parse()
            .map_err(|e: String| CliError::Validation(format!("metrics.convention: {e}")))
    }

    pub fn payload_style(&self) -> Result<RenderStyle, CliError> {
        self.eval
            .payload
            .parse()
            .map_err(|e: String| CliError::Validation(format!("eval.payload: {e}")))
    }

    pub fn clock(&self) -> Clock {
        match self.run.fixed_time {
            Some(t) => Clock::Fixed(t),
            None => Clock::System,
        }
    }

    pub fn embedder(&self) -> HashEmbedder {
        HashEmbedder::with_dims(self.embedding.dims)
    }

    pub fn embedder_model_id(&self) -> String {
        self.embedder().model_id().to_string()
    }

    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        match &self.assets.prompts {
            Some(dir) => PromptSet::load_dir(dir).map_err(classify_generation),
            None => Ok(PromptSet::default()),
        }
    }

    /// Build the chat gateway. Deferred until a stage actually talks to a
    /// model so provider problems surface as that stage's failure.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let gateway = match self.providers.mode {
            ProviderMode::Mock => {
                let script = self.providers.script.as_ref().expect("checked in validate");
                let provider = MockProvider::load(script).map_err(crate::classify_gateway)?;
                Gateway::new(Arc::new(provider))
            }
            ProviderMode::Http => self.http_gateway()?,
        };
        Ok(gateway.with_clock(self.clock()))
    }

    #[cfg(feature = "http")]
    fn http_gateway(&self) -> Result<Gateway, CliError> {
        use oodgen_core::gateway::http::{HttpChatProvider, HttpProviderConfig};
        let http = self.providers.http.as_ref().expect("checked in validate");
        let provider = HttpChatProvider::new(HttpProviderConfig {
            base_url: http.base_url.clone(),
            model: http.model.clone(),
            api_key_env: http.api_key_env.clone(),
            timeout_s: http.timeout_s,
        })
        .map_err(crate::classify_gateway)?;
        Ok(Gateway::new(Arc::new(provider)))
    }

    #[cfg(not(feature = "http"))]
    fn http_gateway(&self) -> Result<Gateway, CliError> {
        Err(CliError::Provider(
            "this build has no HTTP provider support (rebuild with the `http` feature)".into(),
        ))
    }

    /// String recorded in manifests for the chat side; the gateway itself may
    /// never be constructed if no selected stage needs a model.
    pub fn provider_label(&self) -> String {
        match self.providers.mode {
            ProviderMode::Mock => {
                format!("mock:{}", self.providers.script.as_ref().expect("validated").display())
            }
            ProviderMode::Http => {
                let http = self.providers.http.as_ref().expect("validated");
                format!("http:{}", http.model)
            }
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
