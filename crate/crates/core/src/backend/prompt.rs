//! Replay, re-reasoning and hindsight prompt templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguagePair, Sample};
use crate::intervene::{ReplayMode, ReplaySpec};

pub const SYSTEM_MESSAGE: &str = "You are a careful machine translation assistant.";
pub const FOLLOW_TRACE_NOTE: &str = "Use the reasoning trace when deciding on the translation.";

const REREASON_NOTE: &str = "A problematic reasoning step was removed here. Reconsider the source carefully from this point onward and do not rely on the removed unsupported step.";
const REREASON_CONTINUE: &str =
    "You MUST continue reasoning internally from the provided starting point, but return only the final translation.";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PromptError {
    #[error("replay spec for sample {spec:?} applied to sample {sample:?}")]
    SampleMismatch { spec: String, sample: String },
    #[error("hindsight requires reference (sample {0:?})")]
    MissingReference(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayPrompt {
    pub system_message: String,
    pub user_message: String,
    pub thinking_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_prefix: Option<String>,
}

/// Instruction line naming the languages, degrading when names are unknown.
pub fn task_instruction(pair: &LanguagePair) -> String {
    match (pair.source_name.as_deref(), pair.target_name.as_deref()) {
        (Some(src), Some(tgt)) => {
            format!("Translate the following {src} text into {tgt}. Return only the translation.")
        }
        (None, Some(tgt)) => format!("Translate the following text into {tgt}. Return only the translation."),
        _ => "Translate the following text. Return only the translation.".to_string(),
    }
}

/// Shared user message for every replay that conditions on a trace.
pub fn replay_user_message(task: &str, source: &str, trace: &str, notes: &[String]) -> String {
    let notes_block = if notes.is_empty() {
        String::new()
    } else {
        let mut block = String::from("\nAdditional notes:");
        for note in notes {
            block.push_str("\n- ");
            block.push_str(note);
        }
        block
    };
    format!(
        "{task}\n\nSource:\n{source}\n\nReasoning trace:\n{trace}\n{notes_block}\n\n{FOLLOW_TRACE_NOTE}\nReturn only the final translation."
    )
}

pub fn rereason_user_message(task: &str, source: &str, rationale: &str) -> String {
    format!("{task}\n\nSource:\n{source}\n\n{REREASON_NOTE} Target issue: {rationale}\n{REREASON_CONTINUE}")
}

/// Step 1 of hindsight: ask the model to reason from source to reference.
pub fn hindsight_synthesis_prompt(sample: &Sample) -> Result<ReplayPrompt, PromptError> {
    let reference = sample
        .reference
        .as_deref()
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| PromptError::MissingReference(sample.id.clone()))?;
    let task = task_instruction(&sample.pair);
    Ok(ReplayPrompt {
        system_message: SYSTEM_MESSAGE.to_string(),
        user_message: format!(
            "{task}\n\nSource: {}\nReference translation: {reference}\n\n\
             Think step-by-step about how to translate the source to match the reference.\n\
             Analyze key phrases, idioms, and grammatical structures.\n\
             Then produce the final translation.",
            sample.source
        ),
        thinking_enabled: true,
        continuation_prefix: None,
    })
}

/// Builds the prompt that replays `spec` against `sample`.
///
/// Re-reasoning specs get the continuation prompt with the trace prefix as
/// the reasoning to continue; every other mode uses the shared replay
/// template with thinking disabled. For hindsight, `spec.edited_trace` must
/// already hold the synthesized trace.
pub fn assemble_replay_prompt(spec: &ReplaySpec, sample: &Sample) -> Result<ReplayPrompt, PromptError> {
    if spec.sample_id != sample.id {
        return Err(PromptError::SampleMismatch {
            spec: spec.sample_id.clone(),
            sample: sample.id.clone(),
        });
    }
    let task = task_instruction(&sample.pair);
    let prompt = match spec.mode {
        ReplayMode::RereasonContinuation => ReplayPrompt {
            system_message: SYSTEM_MESSAGE.to_string(),
            user_message: rereason_user_message(
                &task,
                &sample.source,
                spec.target_rationale.as_deref().unwrap_or_default(),
            ),
            thinking_enabled: true,
            continuation_prefix: Some(spec.edited_trace.clone()),
        },
        ReplayMode::ReplayNoThinking | ReplayMode::HindsightSynthesisThenReplay => ReplayPrompt {
            system_message: SYSTEM_MESSAGE.to_string(),
            user_message: replay_user_message(&task, &sample.source, &spec.edited_trace, &spec.extra_notes),
            thinking_enabled: false,
            continuation_prefix: None,
        },
    };
    Ok(prompt)
}
