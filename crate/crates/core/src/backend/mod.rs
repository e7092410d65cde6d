//! Chat-model access: request/response types, the backend trait, retries,
//! replay prompt assembly and generation helpers.

mod http;
mod mock;
mod prompt;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockReply, MockRule, Unscripted};
pub use prompt::{
    assemble_replay_prompt, hindsight_synthesis_prompt, task_instruction, ReplayPrompt, FOLLOW_TRACE_NOTE,
    SYSTEM_MESSAGE,
};

/// Default sampling temperature for judge runs.
pub const JUDGE_TEMPERATURE: f32 = 0.4;
pub const DEFAULT_MAX_TOKENS: u32 = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub system: String,
    pub user: String,
    /// 0 requests greedy decoding.
    pub temperature: f32,
    pub max_tokens: u32,
    pub thinking: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            thinking: false,
            continuation_prefix: None,
            seed: None,
        }
    }

    /// Hex SHA-256 over everything that influences the completion
    /// (`max_tokens` excluded).
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "system": self.system,
            "user": self.user,
            "temperature": format!("{:.3}", self.temperature),
            "thinking": self.thinking,
            "continuation_prefix": self.continuation_prefix,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// Short deterministic id used in errors and logs.
    pub fn request_id(&self) -> String {
        format!("req-{}", &self.fingerprint()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub request_id: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("{request_id}: transport error: {message}")]
    Transport { request_id: String, message: String },
    #[error("{request_id}: request timed out")]
    Timeout { request_id: String },
    #[error("{request_id}: server returned {status}: {body}")]
    Status {
        request_id: String,
        status: u16,
        body: String,
    },
    #[error("{request_id}: empty completion")]
    EmptyGeneration { request_id: String },
    #[error("no scripted completion for prompt {fingerprint}")]
    UnscriptedPrompt { fingerprint: String },
    #[error("{request_id}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        request_id: String,
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Errors worth retrying with the same request.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Transport { .. } | Self::Timeout { .. } => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Model identifier, recorded in manifests.
    fn model(&self) -> &str;

    /// Whether the backend can continue generation inside a native
    /// reasoning channel.
    fn native_thinking(&self) -> bool {
        false
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
    fn model(&self) -> &str {
        (**self).model()
    }
    fn native_thinking(&self) -> bool {
        (**self).native_thinking()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
    fn model(&self) -> &str {
        (**self).model()
    }
    fn native_thinking(&self) -> bool {
        (**self).native_thinking()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms as u64)
    }
}

/// Retries transient failures of the wrapped backend.
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B: ChatBackend> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<B: ChatBackend> ChatBackend for Retrying<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let attempts = self.policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match self.inner.complete(request) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() => {
                    attempt += 1;
                    if attempt >= attempts {
                        return Err(BackendError::Exhausted {
                            request_id: request.request_id(),
                            attempts,
                            last: Box::new(e),
                        });
                    }
                    log::warn!("{e}; retrying ({attempt}/{attempts})");
                    thread::sleep(self.policy.backoff(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn native_thinking(&self) -> bool {
        self.inner.native_thinking()
    }
}

/// One request/response exchange as written to a transcript log. A
/// transcript doubles as a [`MockBackend`] script.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    pub request: ChatRequest,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

/// Appends every successful exchange to a JSONL transcript.
pub struct Recording<B> {
    inner: B,
    sink: Mutex<BufWriter<File>>,
}

impl<B: ChatBackend> Recording<B> {
    pub fn new(inner: B, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            fingerprint: request.fingerprint(),
            request: request.clone(),
            text: resp.text.clone(),
            reasoning: resp.reasoning.clone(),
        };
        let line = serde_json::to_string(&entry).expect("transcript entry serializes");
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            log::warn!("transcript write failed: {e}");
        }
        Ok(resp)
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn native_thinking(&self) -> bool {
        self.inner.native_thinking()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoding {
    pub temperature: f32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Decoding {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Final answer with any reasoning block stripped.
    pub text: String,
    /// Reasoning produced by the model, when the backend exposes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    /// Completion exactly as returned by the backend.
    pub raw: String,
    pub request_id: String,
    /// The continuation prefix was folded into the user message because the
    /// backend has no native reasoning channel.
    #[serde(default)]
    pub emulated_continuation: bool,
}

/// Delimiter used when a continuation prefix is emulated in the user turn.
pub const CONTINUATION_HEADER: &str = "Reasoning so far (continue from here):";
pub const CONTINUATION_FOOTER: &str = "--- end of reasoning so far ---";

fn split_reasoning(text: &str) -> (Option<String>, String) {
    for (open, close) in [("<think>", "</think>"), ("<reasoning>", "</reasoning>")] {
        if let Some(end) = text.find(close) {
            let start = text[..end].find(open).map_or(0, |s| s + open.len());
            let reasoning = text[start..end].trim().to_string();
            let answer = text[end + close.len()..].trim().to_string();
            return (Some(reasoning), answer);
        }
    }
    (None, text.trim().to_string())
}

/// Runs one prompt through the backend.
///
/// A continuation prefix goes to the backend's reasoning channel when it has
/// one; otherwise it is prepended to the user message under a delimiter and
/// `emulated_continuation` is set. Inline `<think>`/`<reasoning>` blocks are
/// split off the answer.
pub fn generate(
    backend: &dyn ChatBackend,
    prompt: &ReplayPrompt,
    decoding: Decoding,
) -> Result<GenerationResult, BackendError> {
    let mut request = ChatRequest::new(&prompt.system_message, &prompt.user_message);
    request.temperature = decoding.temperature;
    request.max_tokens = decoding.max_tokens;
    request.seed = decoding.seed;
    request.thinking = prompt.thinking_enabled;
    let mut emulated = false;
    if let Some(prefix) = &prompt.continuation_prefix {
        if backend.native_thinking() {
            request.continuation_prefix = Some(prefix.clone());
        } else {
            request.user = format!(
                "{CONTINUATION_HEADER}\n{prefix}\n{CONTINUATION_FOOTER}\n\n{}",
                prompt.user_message
            );
            emulated = true;
        }
    }
    let resp = backend.complete(&request)?;
    let (inline_reasoning, answer) = split_reasoning(&resp.text);
    let reasoning = resp
        .reasoning
        .clone()
        .filter(|r| !r.trim().is_empty())
        .or(inline_reasoning);
    if answer.is_empty() {
        return Err(BackendError::EmptyGeneration {
            request_id: resp.request_id,
        });
    }
    Ok(GenerationResult {
        text: answer,
        reasoning,
        raw: resp.text,
        request_id: resp.request_id,
        emulated_continuation: emulated,
    })
}

/// Pulls the synthesized trace out of a hindsight step-1 generation.
///
/// Prefers the reasoning channel; otherwise drops the trailing
/// final-translation line from the completion.
pub fn extract_hindsight_trace(result: &GenerationResult) -> String {
    if let Some(r) = result.reasoning.as_deref().filter(|r| !r.trim().is_empty()) {
        return r.trim().to_string();
    }
    let body = result.raw.trim_end();
    match body.rfind('\n') {
        Some(cut) => body[..cut].trim_end().to_string(),
        None => String::new(),
    }
}
