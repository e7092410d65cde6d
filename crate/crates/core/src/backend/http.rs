//! OpenAI-compatible `/chat/completions` client.
//!
//! Thinking is toggled through `chat_template_kwargs.enable_thinking`.
//! Continuation inside the reasoning channel is sent as a trailing assistant
//! message opening `<think>` with `continue_final_message` set, which local
//! inference servers understand; hosted APIs without that support should be
//! configured with `native_thinking = false` so continuation is emulated.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub native_thinking: bool,
}

fn default_timeout() -> u64 {
    300
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            config,
            api_key,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// JSON body sent for `request`.
    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let mut body = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "chat_template_kwargs": {"enable_thinking": request.thinking},
        });
        if let Some(prefix) = &request.continuation_prefix {
            messages.push(json!({"role": "assistant", "content": format!("<think>\n{prefix}")}));
            body["continue_final_message"] = json!(true);
            body["add_generation_prompt"] = json!(false);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body["messages"] = Value::Array(messages);
        body
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
    #[serde(default)]
    reasoning: Option<String>,
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let request_id = request.request_id();
        let mut call = self.client.post(self.endpoint()).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout {
                    request_id: request_id.clone(),
                }
            } else {
                BackendError::Transport {
                    request_id: request_id.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport {
            request_id: request_id.clone(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                request_id,
                status: status.as_u16(),
                body: text,
            });
        }
        let body: CompletionBody = serde_json::from_str(&text).map_err(|e| BackendError::Transport {
            request_id: request_id.clone(),
            message: format!("invalid response body: {e}"),
        })?;
        let message = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::EmptyGeneration {
                request_id: request_id.clone(),
            })?
            .message;
        Ok(ChatResponse {
            text: message.content.unwrap_or_default(),
            reasoning: message.reasoning_content.or(message.reasoning),
            request_id,
        })
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn native_thinking(&self) -> bool {
        self.config.native_thinking
    }
}
