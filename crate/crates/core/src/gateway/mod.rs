//! Provider abstraction for chat completions and text embeddings.
//!
//! Every LLM touchpoint in the pipeline goes through a [`Gateway`], which
//! layers request validation, a token-bucket rate limiter, retry with
//! exponential backoff, and a JSON-lines transcript over a [`ChatProvider`].
//! The [`mock::MockProvider`] makes the whole pipeline runnable offline and
//! bit-reproducible.

pub mod embed;
pub mod extract;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;

pub use embed::{embed, Embedder, EmbeddingVector, HashEmbedder};
pub use extract::{extract_structured, JsonSchema, SchemaNode};
pub use mock::{
    MockProvider, MockReply, MockReplySpec, MockScript, MockScriptEntry, MockWhen,
    MOCK_SCRIPT_SCHEMA_VERSION,
};

use crate::clock::Clock;
use crate::sha256_hex;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// The LLM roles the pipeline distinguishes. Providers may route them to
/// different models; mocks script them independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "tree-llm")]
    TreeLlm,
    #[serde(rename = "red-llm")]
    RedLlm,
    #[serde(rename = "augmenter-llm")]
    AugmenterLlm,
    #[serde(rename = "vlm")]
    Vlm,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::TreeLlm => "tree-llm",
            Role::RedLlm => "red-llm",
            Role::AugmenterLlm => "augmenter-llm",
            Role::Vlm => "vlm",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

/// PNG image attached to a message. Only the hash travels through serde;
/// raw bytes stay in memory for providers that upload them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub label: String,
    pub sha256: String,
    #[serde(skip)]
    pub png: Vec<u8>,
}

impl ImageAttachment {
    pub fn from_png(label: impl Into<String>, png: Vec<u8>) -> Self {
        ImageAttachment {
            label: label.into(),
            sha256: sha256_hex(&png),
            png,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageAttachment>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage { speaker: Speaker::System, text: text.into(), images: Vec::new() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage { speaker: Speaker::User, text: text.into(), images: Vec::new() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage { speaker: Speaker::Assistant, text: text.into(), images: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_name: Role,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<String>,
}

impl ChatRequest {
    pub fn new(role: Role, messages: Vec<ChatMessage>) -> Self {
        // structure-sensitive roles run cool; the red team runs hot
        let temperature = match role {
            Role::RedLlm => 0.7,
            _ => 0.2,
        };
        ChatRequest {
            role_name: role,
            messages,
            temperature,
            max_output_tokens: 4096,
            response_schema: None,
        }
    }

    pub fn with_schema(mut self, schema_id: impl Into<String>) -> Self {
        self.response_schema = Some(schema_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("at least one message required".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be ≥ 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if self.role_name != Role::Vlm && self.messages.iter().any(|m| !m.images.is_empty()) {
            return Err(GatewayError::InvalidRequest(format!(
                "image attachments are only allowed for role vlm, not {}",
                self.role_name
            )));
        }
        Ok(())
    }

    /// Content hash of role + messages; scripts and transcripts key on this.
    pub fn prompt_sha256(&self) -> String {
        let mut canon = String::new();
        let _ = writeln!(canon, "role:{}", self.role_name);
        for m in &self.messages {
            let speaker = match m.speaker {
                Speaker::System => "system",
                Speaker::User => "user",
                Speaker::Assistant => "assistant",
            };
            let _ = writeln!(canon, "{}:{}", speaker, m.text);
            for img in &m.images {
                let _ = writeln!(canon, "image:{}", img.sha256);
            }
        }
        sha256_hex(canon.as_bytes())
    }

    /// All message text concatenated; mock `contains` matchers search this.
    pub fn flat_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model_id: String,
    #[serde(default)]
    pub usage: Usage,
    /// 1-based attempt number that produced this response.
    #[serde(default)]
    pub attempts: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited by provider")]
    RateLimited { retry_after_s: Option<f64> },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("mock script exhausted for role {role} (prompt {prompt_sha256})")]
    ScriptExhausted { role: Role, prompt_sha256: String },
    #[error("structured extraction failed for schema `{schema_id}`: {message}")]
    StructuredExtraction {
        schema_id: String,
        message: String,
        raw: String,
        repair_raw: Option<String>,
    },
    #[error("embedding input must be non-empty")]
    EmptyEmbeddingInput,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GatewayError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::RateLimited { .. } | GatewayError::Timeout(_) | GatewayError::Transport(_) => true,
            GatewayError::Provider { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Exponential backoff schedule for transient provider failures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 200, max_delay_ms: 5_000 }
    }
}

impl RetryPolicy {
    /// Delay before retrying after the given 1-based failed attempt.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(16);
        let ms = self.base_delay_ms.saturating_mul(1u64 << exp).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Token bucket bounding request rate across threads.
pub struct RateLimiter {
    capacity: f64,
    refill_per_s: f64,
    state: Mutex<(f64, std::time::Instant)>,
}

impl RateLimiter {
    pub fn new(capacity: u32, refill_per_s: f64) -> Self {
        assert!(capacity > 0 && refill_per_s > 0.0);
        RateLimiter {
            capacity: capacity as f64,
            refill_per_s,
            state: Mutex::new((capacity as f64, std::time::Instant::now())),
        }
    }

    /// Take one token, sleeping until the bucket refills if necessary.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter poisoned");
                let now = std::time::Instant::now();
                let elapsed = now.duration_since(st.1).as_secs_f64();
                st.0 = (st.0 + elapsed * self.refill_per_s).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.refill_per_s
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.05)));
        }
    }
}

/// One transcript line per provider attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub ts: String,
    pub seq: u64,
    pub role: Role,
    pub model_id: String,
    pub prompt_sha256: String,
    pub attempt: u32,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSON-lines audit log of every provider attempt.
pub struct Transcript {
    writer: Mutex<std::io::BufWriter<std::fs::File>>,
    path: String,
    seq: AtomicU64,
}

impl Transcript {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Transcript {
            writer: Mutex::new(std::io::BufWriter::new(file)),
            path: path.display().to_string(),
            seq: AtomicU64::new(0),
        })
    }

    pub fn log(&self, mut record: TranscriptRecord) -> Result<(), GatewayError> {
        record.seq = self.seq.fetch_add(1, Ordering::SeqCst);
        let line = serde_json::to_string(&record).expect("transcript record serializes");
        let mut w = self.writer.lock().expect("transcript poisoned");
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|source| GatewayError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn read_back(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| GatewayError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })
            })
            .collect()
    }
}

/// A chat backend. Implementations must be safe for concurrent calls.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn model_id(&self) -> &str;
    /// Mocks skip backoff sleeps so retry tests run instantly.
    fn zero_delay(&self) -> bool {
        false
    }
}

/// Provider plus the cross-cutting concerns every call shares.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    transcript: Option<Transcript>,
    clock: Clock,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Gateway {
            provider,
            retry: RetryPolicy::default(),
            limiter: None,
            transcript: None,
            clock: Clock::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    fn log_attempt(
        &self,
        request: &ChatRequest,
        attempt: u32,
        result: &Result<ChatResponse, GatewayError>,
    ) {
        let Some(t) = &self.transcript else { return };
        let record = TranscriptRecord {
            ts: self.clock.now_rfc3339(),
            seq: 0,
            role: request.role_name,
            model_id: self.provider.model_id().to_string(),
            prompt_sha256: request.prompt_sha256(),
            attempt,
            outcome: if result.is_ok() { "ok".into() } else { "error".into() },
            response_text: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        // transcript failures must not mask the provider result
        let _ = t.log(record);
    }

    /// Issue a chat completion with validation, rate limiting, retries, and
    /// transcript logging. Non-retryable errors surface immediately.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            let result = self.provider.complete(request);
            self.log_attempt(request, attempt, &result);
            match result {
                Ok(mut resp) => {
                    resp.attempts = attempt;
                    return Ok(resp);
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    if !self.provider.zero_delay() {
                        std::thread::sleep(self.retry.delay_after(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Completion followed by structured extraction, with one repair
    /// round-trip on failure. The repair prompt replays the conversation
    /// plus the validation error.
    pub fn complete_structured(
        &self,
        request: &ChatRequest,
        schema: &JsonSchema,
    ) -> Result<(serde_json::Value, ChatResponse), GatewayError> {
        let request = request.clone().with_schema(schema.id.clone());
        let first = self.complete(&request)?;
        let first_err = match extract_structured(&first.text, schema) {
            Ok(doc) => return Ok((doc, first)),
            Err(e) => e,
        };
        let mut repair = request.clone();
        repair.messages.push(ChatMessage::assistant(first.text.clone()));
        repair.messages.push(ChatMessage::user(format!(
            "Your previous reply did not contain a valid `{}` document: {}. \
             Reply with only the corrected JSON document and nothing else.",
            schema.id, first_err
        )));
        let second = self.complete(&repair)?;
        match extract_structured(&second.text, schema) {
            Ok(doc) => Ok((doc, second)),
            Err(e) => Err(GatewayError::StructuredExtraction {
                schema_id: schema.id.clone(),
                message: e.to_string(),
                raw: first.text,
                repair_raw: Some(second.text),
            }),
        }
    }
}
