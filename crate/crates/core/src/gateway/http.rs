//! OpenAI-compatible HTTP chat and embedding providers.
//!
//! Credentials are never written to config files: the config names an
//! environment variable and the key is read at construction time.

use super::{ChatProvider, ChatRequest, ChatResponse, Embedder, GatewayError, Speaker, Usage};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

fn read_key(var: &str) -> Result<String, GatewayError> {
    std::env::var(var)
        .map_err(|_| GatewayError::Auth(format!("environment variable `{var}` is not set")))
}

fn build_client(timeout_s: u64) -> Result<reqwest::blocking::Client, GatewayError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_s))
        .build()
        .map_err(|e| GatewayError::Transport(e.to_string()))
}

fn classify_transport(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout(e.to_string())
    } else {
        GatewayError::Transport(e.to_string())
    }
}

fn classify_status(status: u16, body: String) -> GatewayError {
    match status {
        401 | 403 => GatewayError::Auth(body),
        429 => GatewayError::RateLimited { retry_after_s: None },
        _ => GatewayError::Provider { status, message: body },
    }
}

pub struct HttpChatProvider {
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, GatewayError> {
        let api_key = read_key(&config.api_key_env)?;
        let client = build_client(config.timeout_s)?;
        Ok(HttpChatProvider { config, api_key, client })
    }

    fn message_payload(request: &ChatRequest) -> Vec<serde_json::Value> {
        request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                if m.images.is_empty() {
                    json!({ "role": role, "content": m.text })
                } else {
                    let mut parts = vec![json!({ "type": "text", "text": m.text })];
                    for img in &m.images {
                        let data = base64::engine::general_purpose::STANDARD.encode(&img.png);
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:image/png;base64,{data}") }
                        }));
                    }
                    json!({ "role": role, "content": parts })
                }
            })
            .collect()
    }
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<UsageBody>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let payload = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": Self::message_payload(request),
        });
        let response = self
            .client
            .post(format!("{}/chat/completions", self.config.base_url))
            .bearer_auth(&self.api_key)
            .json(&payload)
            .send()
            .map_err(classify_transport)?;
        let status = response.status().as_u16();
        let body = response.text().map_err(classify_transport)?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, body));
        }
        let parsed: ChatCompletionBody = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Provider { status, message: format!("bad body: {e}") })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Provider { status, message: "no choices".into() })?;
        Ok(ChatResponse {
            text: choice.message.content,
            model_id: parsed.model.unwrap_or_else(|| self.config.model.clone()),
            usage: parsed
                .usage
                .map(|u| Usage { input_tokens: u.prompt_tokens, output_tokens: u.completion_tokens })
                .unwrap_or_default(),
            attempts: 0,
        })
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }
}

pub struct HttpEmbedder {
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: HttpProviderConfig) -> Result<Self, GatewayError> {
        let api_key = read_key(&config.api_key_env)?;
        let client = build_client(config.timeout_s)?;
        Ok(HttpEmbedder { config, api_key, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    index: usize,
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let payload = json!({ "model": self.config.model, "input": texts });
        let response = self
            .client
            .post(format!("{}/embeddings", self.config.base_url))
            .bearer_auth(&self.api_key)
            .json(&payload)
            .send()
            .map_err(classify_transport)?;
        let status = response.status().as_u16();
        let body = response.text().map_err(classify_transport)?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, body));
        }
        let parsed: EmbeddingBody = serde_json::from_str(&body)
            .map_err(|e| GatewayError::Provider { status, message: format!("bad body: {e}") })?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::Provider {
                status,
                message: format!("expected {} embeddings, got {}", texts.len(), parsed.data.len()),
            });
        }
        let mut out = vec![Vec::new(); texts.len()];
        for datum in parsed.data {
            if datum.index >= out.len() {
                return Err(GatewayError::Provider {
                    status,
                    message: format!("embedding index {} out of range", datum.index),
                });
            }
            out[datum.index] = datum.embedding;
        }
        Ok(out)
    }
}
