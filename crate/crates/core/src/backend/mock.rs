//! Deterministic offline backend driven by a script.
//!
//! A script is a JSONL file. Each line is either an exact entry keyed by the
//! request fingerprint,
//!
//! ```text
//! {"fingerprint": "<sha256 hex>", "text": "...", "reasoning": "..."}
//! ```
//!
//! or a rule that matches when the user message contains every listed
//! substring (and, when given, the seed and temperature agree):
//!
//! ```text
//! {"contains": ["SOURCE:\nThe bug", "OUTPUT:"], "seed": 0, "text": "..."}
//! ```
//!
//! Exact entries win over rules; rules are tried in file order. Transcript
//! logs written by [`super::Recording`] load as exact entries.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            reasoning: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
    #[serde(flatten)]
    pub reply: MockReply,
}

impl MockRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.seed.is_none_or(|s| req.seed == Some(s))
            && self.temperature.is_none_or(|t| (t - req.temperature).abs() < 1e-6)
            && self.contains.iter().all(|needle| req.user.contains(needle.as_str()))
    }
}

/// What to do with a request the script does not cover.
#[derive(Debug, Clone, PartialEq)]
pub enum Unscripted {
    Error,
    Reply(MockReply),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Exact {
        fingerprint: String,
        text: String,
        #[serde(default)]
        reasoning: Option<String>,
    },
    Rule(MockRule),
}

type Responder = Box<dyn Fn(&ChatRequest) -> Option<MockReply> + Send + Sync>;

pub struct MockBackend {
    model: String,
    exact: HashMap<String, MockReply>,
    rules: Vec<MockRule>,
    responder: Option<Responder>,
    unscripted: Unscripted,
    native_thinking: bool,
}

impl MockBackend {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            exact: HashMap::new(),
            rules: Vec::new(),
            responder: None,
            unscripted: Unscripted::Error,
            native_thinking: false,
        }
    }

    /// Builds a backend from a fingerprint-to-completion map.
    pub fn from_script(model: impl Into<String>, script: HashMap<String, MockReply>) -> Self {
        let mut mock = Self::new(model);
        mock.exact = script;
        mock
    }

    pub fn load(model: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        let mut mock = Self::new(model);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            match parsed {
                ScriptLine::Exact {
                    fingerprint,
                    text,
                    reasoning,
                } => {
                    mock.exact.insert(fingerprint, MockReply { text, reasoning });
                }
                ScriptLine::Rule(rule) => mock.rules.push(rule),
            }
        }
        Ok(mock)
    }

    pub fn respond(mut self, request: &ChatRequest, reply: MockReply) -> Self {
        self.exact.insert(request.fingerprint(), reply);
        self
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Consulted after exact entries and rules.
    pub fn with_responder(mut self, f: impl Fn(&ChatRequest) -> Option<MockReply> + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.unscripted = Unscripted::Reply(MockReply::text(text));
        self
    }

    pub fn with_unscripted(mut self, policy: Unscripted) -> Self {
        self.unscripted = policy;
        self
    }

    pub fn with_native_thinking(mut self, on: bool) -> Self {
        self.native_thinking = on;
        self
    }

    fn lookup(&self, req: &ChatRequest) -> Option<MockReply> {
        if let Some(reply) = self.exact.get(&req.fingerprint()) {
            return Some(reply.clone());
        }
        if let Some(rule) = self.rules.iter().find(|r| r.matches(req)) {
            return Some(rule.reply.clone());
        }
        self.responder.as_ref().and_then(|f| f(req))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let reply = match self.lookup(request) {
            Some(reply) => reply,
            None => match &self.unscripted {
                Unscripted::Reply(reply) => reply.clone(),
                Unscripted::Error => {
                    return Err(BackendError::UnscriptedPrompt {
                        fingerprint: request.fingerprint(),
                    })
                }
            },
        };
        Ok(ChatResponse {
            text: reply.text,
            reasoning: reply.reasoning,
            request_id: request.request_id(),
        })
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn native_thinking(&self) -> bool {
        self.native_thinking
    }
}
