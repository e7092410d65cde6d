//! Human annotation records and their validation rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("{field}: {rule}")]
    Invalid { field: &'static str, rule: &'static str },
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("item {item:?} was not served to annotator {annotator:?}")]
    NotServed { item: String, annotator: String },
}

fn invalid(field: &'static str, rule: &'static str) -> RecordError {
    RecordError::Invalid { field, rule }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase1Verdict {
    Ok,
    NotOk,
    Unsure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Confidence {
    Confident,
    Somewhat,
    NotConfident,
}

impl Confidence {
    pub fn score(self) -> f64 {
        match self {
            Self::Confident => 1.0,
            Self::Somewhat => 0.5,
            Self::NotConfident => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IsError {
    Yes,
    No,
    Borderline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reflected {
    Yes,
    No,
    #[serde(alias = "UNSURE")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorLabel {
    SourceMisinterpretation,
    InternalContradiction,
    NoIssue,
    OtherUnsure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Record {
    pub sample_id: String,
    pub annotator_id: String,
    pub verdict: Phase1Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_error_span: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_error_span: Option<String>,
    pub confidence: Confidence,
    /// RFC 3339; filled in by the store when blank.
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Record {
    pub issue_id: String,
    pub annotator_id: String,
    pub is_error: IsError,
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflected: Option<Reflected>,
    pub categories: Vec<ErrorLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            other => Err(format!("phase must be 1 or 2, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase")]
pub enum AnnotationRecord {
    #[serde(rename = "1")]
    Phase1(Phase1Record),
    #[serde(rename = "2")]
    Phase2(Phase2Record),
}

fn present(span: &Option<String>) -> bool {
    span.as_deref().is_some_and(|s| !s.trim().is_empty())
}

impl AnnotationRecord {
    pub fn phase(&self) -> Phase {
        match self {
            Self::Phase1(_) => Phase::One,
            Self::Phase2(_) => Phase::Two,
        }
    }

    /// Sample id for phase 1, issue id for phase 2.
    pub fn item_id(&self) -> &str {
        match self {
            Self::Phase1(r) => &r.sample_id,
            Self::Phase2(r) => &r.issue_id,
        }
    }

    pub fn annotator_id(&self) -> &str {
        match self {
            Self::Phase1(r) => &r.annotator_id,
            Self::Phase2(r) => &r.annotator_id,
        }
    }

    pub fn timestamp(&self) -> &str {
        match self {
            Self::Phase1(r) => &r.timestamp,
            Self::Phase2(r) => &r.timestamp,
        }
    }

    pub fn set_timestamp(&mut self, ts: String) {
        match self {
            Self::Phase1(r) => r.timestamp = ts,
            Self::Phase2(r) => r.timestamp = ts,
        }
    }

    /// Checks the per-record rules; the first violation is reported.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.item_id().trim().is_empty() {
            return Err(invalid("item", "item id must not be empty"));
        }
        if self.annotator_id().trim().is_empty() {
            return Err(invalid("annotator_id", "annotator id must not be empty"));
        }
        match self {
            Self::Phase1(r) => {
                let not_ok = r.verdict == Phase1Verdict::NotOk;
                if not_ok && !present(&r.source_error_span) {
                    return Err(invalid("source_error_span", "required when verdict is NOT_OK"));
                }
                if not_ok && !present(&r.translation_error_span) {
                    return Err(invalid("translation_error_span", "required when verdict is NOT_OK"));
                }
                if !not_ok && (r.source_error_span.is_some() || r.translation_error_span.is_some()) {
                    return Err(invalid(
                        "source_error_span",
                        "spans allowed only when verdict is NOT_OK",
                    ));
                }
            }
            Self::Phase2(r) => {
                if r.categories.is_empty() {
                    return Err(invalid("categories", "at least one category is required"));
                }
                let gated = matches!(r.is_error, IsError::Yes | IsError::Borderline);
                if gated && r.reflected.is_none() {
                    return Err(invalid("reflected", "required when is_error is YES or BORDERLINE"));
                }
                if !gated && r.reflected.is_some() {
                    return Err(invalid("reflected", "allowed only when is_error is YES or BORDERLINE"));
                }
            }
        }
        Ok(())
    }
}
