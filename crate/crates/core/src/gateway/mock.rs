//! Scriptable offline chat provider.
//!
//! Three matching layers, checked in order:
//! 1. exact prompt hash → reusable reply (stable across repeated calls),
//! 2. substring match against the concatenated prompt text (reusable),
//! 3. per-role FIFO queue (each entry consumed once).
//!
//! Scripts can also be loaded from a JSON file so CLI runs are reproducible
//! without any credentials.

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, Role, Usage};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

pub const MOCK_SCRIPT_SCHEMA_VERSION: u32 = 1;

/// What a matched script entry produces.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    AuthError(String),
    RateLimited,
    Timeout,
    ProviderError { status: u16, message: String },
}

impl MockReply {
    pub fn text(t: impl Into<String>) -> Self {
        MockReply::Text(t.into())
    }

    pub fn auth_error(msg: impl Into<String>) -> Self {
        MockReply::AuthError(msg.into())
    }

    pub fn rate_limited() -> Self {
        MockReply::RateLimited
    }

    pub fn timeout() -> Self {
        MockReply::Timeout
    }

    pub fn provider_error(status: u16, message: impl Into<String>) -> Self {
        MockReply::ProviderError { status, message: message.into() }
    }

    fn into_result(self, model_id: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        match self {
            MockReply::Text(text) => {
                // rough token estimate keeps usage fields plausible
                let input_tokens = (request.flat_text().len() / 4) as u64;
                let output_tokens = (text.len() / 4) as u64;
                Ok(ChatResponse {
                    text,
                    model_id: model_id.to_string(),
                    usage: Usage { input_tokens, output_tokens },
                    attempts: 0,
                })
            }
            MockReply::AuthError(msg) => Err(GatewayError::Auth(msg)),
            MockReply::RateLimited => Err(GatewayError::RateLimited { retry_after_s: None }),
            MockReply::Timeout => Err(GatewayError::Timeout("scripted timeout".into())),
            MockReply::ProviderError { status, message } => {
                Err(GatewayError::Provider { status, message })
            }
        }
    }
}

#[derive(Default)]
struct MockState {
    queues: HashMap<Role, VecDeque<MockReply>>,
    keyed: HashMap<String, MockReply>,
    contains: Vec<(String, MockReply)>,
}

pub struct MockProvider {
    model_id: String,
    state: Mutex<MockState>,
    calls: AtomicU64,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>) -> Self {
        MockProvider {
            model_id: model_id.into(),
            state: Mutex::new(MockState::default()),
            calls: AtomicU64::new(0),
        }
    }

    /// Queue a one-shot reply for a role.
    pub fn push(&self, role: Role, reply: MockReply) {
        self.state
            .lock()
            .expect("mock state poisoned")
            .queues
            .entry(role)
            .or_default()
            .push_back(reply);
    }

    /// Register a reusable reply for an exact prompt hash.
    pub fn insert_keyed(&self, prompt_sha256: impl Into<String>, reply: MockReply) {
        self.state
            .lock()
            .expect("mock state poisoned")
            .keyed
            .insert(prompt_sha256.into(), reply);
    }

    /// Register a reusable reply matched by substring of the prompt text.
    /// Needles are tried in insertion order.
    pub fn insert_contains(&self, needle: impl Into<String>, reply: MockReply) {
        self.state
            .lock()
            .expect("mock state poisoned")
            .contains
            .push((needle.into(), reply));
    }

    /// Total completions served or attempted.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Replies still queued for a role.
    pub fn queued(&self, role: Role) -> usize {
        self.state
            .lock()
            .expect("mock state poisoned")
            .queues
            .get(&role)
            .map_or(0, |q| q.len())
    }

    pub fn from_script(script: &MockScript) -> Result<Self, GatewayError> {
        if script.schema_version != MOCK_SCRIPT_SCHEMA_VERSION {
            return Err(GatewayError::InvalidRequest(format!(
                "unsupported mock script schema version {}",
                script.schema_version
            )));
        }
        let provider = MockProvider::new(script.model_id.clone());
        for entry in &script.entries {
            let reply = entry.reply.to_reply();
            match &entry.when {
                MockWhen::Queue => {
                    let role = entry.role.ok_or_else(|| {
                        GatewayError::InvalidRequest("queue entries need a role".into())
                    })?;
                    provider.push(role, reply);
                }
                MockWhen::PromptSha256 { value } => provider.insert_keyed(value.clone(), reply),
                MockWhen::Contains { value } => provider.insert_contains(value.clone(), reply),
            }
        }
        Ok(provider)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| GatewayError::InvalidRequest(format!("bad mock script: {e}")))?;
        Self::from_script(&script)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt_hash = request.prompt_sha256();
        let mut state = self.state.lock().expect("mock state poisoned");
        if let Some(reply) = state.keyed.get(&prompt_hash) {
            return reply.clone().into_result(&self.model_id, request);
        }
        let flat = request.flat_text();
        if let Some((_, reply)) = state.contains.iter().find(|(needle, _)| flat.contains(needle)) {
            return reply.clone().into_result(&self.model_id, request);
        }
        if let Some(reply) = state.queues.get_mut(&request.role_name).and_then(VecDeque::pop_front) {
            return reply.into_result(&self.model_id, request);
        }
        Err(GatewayError::ScriptExhausted {
            role: request.role_name,
            prompt_sha256: prompt_hash,
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn zero_delay(&self) -> bool {
        true
    }
}

/// JSON file format for mock scripts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub schema_version: u32,
    pub model_id: String,
    pub entries: Vec<MockScriptEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub when: MockWhen,
    pub reply: MockReplySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockWhen {
    /// FIFO entry for `role`.
    Queue,
    /// Reusable, matched on the request's prompt hash.
    PromptSha256 { value: String },
    /// Reusable, matched when the prompt text contains `value`.
    Contains { value: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockReplySpec {
    Text { text: String },
    Error {
        error: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<u16>,
    },
}

impl MockReplySpec {
    fn to_reply(&self) -> MockReply {
        match self {
            MockReplySpec::Text { text } => MockReply::Text(text.clone()),
            MockReplySpec::Error { error, message, status } => match error.as_str() {
                "auth" => MockReply::AuthError(message.clone().unwrap_or_default()),
                "rate_limited" => MockReply::RateLimited,
                "timeout" => MockReply::Timeout,
                _ => MockReply::ProviderError {
                    status: status.unwrap_or(500),
                    message: message.clone().unwrap_or_else(|| error.clone()),
                },
            },
        }
    }
}
