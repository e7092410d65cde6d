//! The six trace interventions and the replay specs they produce.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize_trace, Sample};
use crate::judge::Issue;
use crate::locate::{locate_issue_edit_span, EditSpan};

pub const HEDGE_PREFIX: &str = "Possibly, but this should be verified against the source";
const HEDGE_WORDS: &[&str] = &["maybe", "possibly", "perhaps", "it may be"];

pub const ORACLE_ONE_HEADER: &str = "Oracle correction for one identified issue:";
pub const ORACLE_K_HEADER: &str = "Oracle corrections for all identified issues:";
const ORACLE_CLOSING: &str = "Use the source sentence to avoid carrying this error into the final translation.";

#[derive(Debug, Error, PartialEq)]
pub enum InterveneError {
    #[error("hindsight requires reference (sample {0:?})")]
    MissingReference(String),
    #[error("unknown intervention {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InterventionKind {
    #[serde(rename = "hedging")]
    Hedging,
    #[serde(rename = "removal")]
    Removal,
    #[serde(rename = "rereason")]
    Rereason,
    #[serde(rename = "hindsight")]
    Hindsight,
    #[serde(rename = "oracle-1")]
    OracleOne,
    #[serde(rename = "oracle-k")]
    OracleK,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 6] = [
        Self::Hedging,
        Self::Removal,
        Self::Rereason,
        Self::Hindsight,
        Self::OracleOne,
        Self::OracleK,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hedging => "hedging",
            Self::Removal => "removal",
            Self::Rereason => "rereason",
            Self::Hindsight => "hindsight",
            Self::OracleOne => "oracle-1",
            Self::OracleK => "oracle-k",
        }
    }

    /// Row label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Rereason => "re-reason",
            other => other.as_str(),
        }
    }

    /// Report row order.
    pub fn report_rank(self) -> usize {
        match self {
            Self::Hedging => 0,
            Self::Hindsight => 1,
            Self::OracleOne => 2,
            Self::OracleK => 3,
            Self::Removal => 4,
            Self::Rereason => 5,
        }
    }

    /// Kinds that edit a located sentence and skip unlocatable issues.
    pub fn needs_span(self) -> bool {
        matches!(self, Self::Hedging | Self::Removal | Self::Rereason)
    }

    pub fn parse_list(list: &str) -> Result<Vec<Self>, InterveneError> {
        let mut kinds = Vec::new();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind: Self = part.parse()?;
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        Ok(kinds)
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionKind {
    type Err = InterveneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hedging" => Ok(Self::Hedging),
            "removal" => Ok(Self::Removal),
            "rereason" | "re-reason" => Ok(Self::Rereason),
            "hindsight" => Ok(Self::Hindsight),
            "oracle-1" | "oracle1" => Ok(Self::OracleOne),
            "oracle-k" | "oraclek" => Ok(Self::OracleK),
            _ => Err(InterveneError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplayMode {
    ReplayNoThinking,
    RereasonContinuation,
    HindsightSynthesisThenReplay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub kind: InterventionKind,
    pub sample_id: String,
    /// The single targeted issue; absent for hindsight and oracle-k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_id: Option<String>,
    /// Every issue this replay is judged against.
    pub target_issue_ids: Vec<String>,
    /// The edited trace. For hindsight it is empty until the synthesis step
    /// fills it in.
    pub edited_trace: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_notes: Vec<String>,
    pub mode: ReplayMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_span: Option<EditSpan>,
    /// Rationale quoted in the re-reasoning prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rationale: Option<String>,
}

impl ReplaySpec {
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}",
            self.sample_id,
            self.kind,
            self.issue_id.as_deref().unwrap_or("*")
        )
    }
}

/// Replaces the sentence at `span` with its hedged form unless it already
/// opens with a hedge word.
pub fn hedge(trace: &str, span: &EditSpan) -> String {
    let (start, end) = span.span;
    let sentence = &trace[start..end];
    if sentence.is_empty() || starts_with_hedge(sentence) {
        return trace.to_string();
    }
    format!("{}{HEDGE_PREFIX}: {sentence}{}", &trace[..start], &trace[end..])
}

fn starts_with_hedge(sentence: &str) -> bool {
    HEDGE_WORDS
        .iter()
        .any(|w| sentence.get(..w.len()).is_some_and(|head| head.eq_ignore_ascii_case(w)))
}

/// Collapses every run of two or more blank lines into a single blank line.
pub fn collapse_blank_lines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut previous_blank = false;
    for line in text.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if blank && previous_blank {
            continue;
        }
        previous_blank = blank;
        out.push_str(line);
    }
    out
}

/// Deletes the sentences at `span` and collapses blank-line runs.
///
/// Spaces and tabs after the span go with it; when the span ends its line,
/// the spaces before it go instead, so no dangling separator is left.
pub fn remove(trace: &str, span: &EditSpan) -> String {
    let (mut start, mut end) = span.span;
    let inline_ws = |c: char| c == ' ' || c == '\t';
    end += trace[end..].len() - trace[end..].trim_start_matches(inline_ws).len();
    if end == trace.len() || trace[end..].starts_with(['\n', '\r']) {
        start = trace[..start].trim_end_matches(inline_ws).len();
    }
    collapse_blank_lines(&format!("{}{}", &trace[..start], &trace[end..]))
}

/// Trace text strictly before the span, blank lines collapsed.
pub fn rereason_prefix(trace: &str, span: &EditSpan) -> String {
    collapse_blank_lines(&trace[..span.span.0])
}

fn single_issue_spec(kind: InterventionKind, sample: &Sample, issue: &Issue, edited_trace: String) -> ReplaySpec {
    ReplaySpec {
        kind,
        sample_id: sample.id.clone(),
        issue_id: Some(issue.id()),
        target_issue_ids: vec![issue.id()],
        edited_trace,
        extra_notes: Vec::new(),
        mode: ReplayMode::ReplayNoThinking,
        edit_span: None,
        target_rationale: None,
    }
}

pub fn hedging_spec(sample: &Sample, issue: &Issue, span: &EditSpan) -> ReplaySpec {
    let mut spec = single_issue_spec(InterventionKind::Hedging, sample, issue, hedge(&sample.trace, span));
    spec.edit_span = Some(span.clone());
    spec
}

pub fn removal_spec(sample: &Sample, issue: &Issue, span: &EditSpan) -> ReplaySpec {
    let mut spec = single_issue_spec(InterventionKind::Removal, sample, issue, remove(&sample.trace, span));
    spec.edit_span = Some(span.clone());
    spec
}

pub fn rereason_spec(sample: &Sample, issue: &Issue, span: &EditSpan) -> ReplaySpec {
    let mut spec = single_issue_spec(
        InterventionKind::Rereason,
        sample,
        issue,
        rereason_prefix(&sample.trace, span),
    );
    spec.mode = ReplayMode::RereasonContinuation;
    spec.edit_span = Some(span.clone());
    spec.target_rationale = Some(issue.rationale.clone());
    spec
}

/// One hindsight replay for the whole sample.
pub fn hindsight_spec(sample: &Sample, targeted: &[&Issue]) -> Result<ReplaySpec, InterveneError> {
    if sample.reference.as_deref().is_none_or(|r| r.trim().is_empty()) {
        return Err(InterveneError::MissingReference(sample.id.clone()));
    }
    Ok(ReplaySpec {
        kind: InterventionKind::Hindsight,
        sample_id: sample.id.clone(),
        issue_id: None,
        target_issue_ids: targeted.iter().map(|i| i.id()).collect(),
        edited_trace: String::new(),
        extra_notes: Vec::new(),
        mode: ReplayMode::HindsightSynthesisThenReplay,
        edit_span: None,
        target_rationale: None,
    })
}

fn present(field: Option<&str>) -> Option<&str> {
    field.filter(|s| !s.trim().is_empty())
}

/// Bullet-list hint built from an issue's quotes and rationale.
pub fn build_oracle_note(issue: &Issue) -> String {
    let mut lines = Vec::with_capacity(5);
    if let Some(q) = present(Some(&issue.trace_quote)) {
        lines.push(format!("- Problematic trace snippet: {q}"));
    }
    if let Some(q) = present(issue.source_quote.as_deref()) {
        lines.push(format!("- Relevant source quote: {q}"));
    }
    if let Some(q) = present(issue.output_quote.as_deref()) {
        lines.push(format!("- Original output quote: {q}"));
    }
    if let Some(r) = present(Some(&issue.rationale)) {
        lines.push(format!("- Why it is problematic: {r}"));
    }
    lines.push(format!("- {ORACLE_CLOSING}"));
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    One,
    K,
}

/// Oracle replays keep the original trace and add notes.
pub fn oracle_specs(sample: &Sample, targeted: &[&Issue], mode: OracleMode) -> Vec<ReplaySpec> {
    if targeted.is_empty() {
        return Vec::new();
    }
    match mode {
        OracleMode::One => targeted
            .iter()
            .map(|issue| {
                let mut spec = single_issue_spec(InterventionKind::OracleOne, sample, issue, sample.trace.clone());
                spec.extra_notes = vec![format!("{ORACLE_ONE_HEADER}\n{}", build_oracle_note(issue))];
                spec
            })
            .collect(),
        OracleMode::K => {
            let mut notes = vec![ORACLE_K_HEADER.to_string()];
            notes.extend(targeted.iter().map(|i| build_oracle_note(i)));
            vec![ReplaySpec {
                kind: InterventionKind::OracleK,
                sample_id: sample.id.clone(),
                issue_id: None,
                target_issue_ids: targeted.iter().map(|i| i.id()).collect(),
                edited_trace: sample.trace.clone(),
                extra_notes: notes,
                mode: ReplayMode::ReplayNoThinking,
                edit_span: None,
                target_rationale: None,
            }]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedIssue {
    pub sample_id: String,
    pub issue_id: String,
    pub kind: InterventionKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterventionPlan {
    pub specs: Vec<ReplaySpec>,
    pub skipped: Vec<SkippedIssue>,
}

/// Builds every requested replay spec for one sample.
///
/// Only ERROR-severity issues are targeted; edits are applied per issue,
/// independently, to the original trace. A sample with no targeted issues
/// yields nothing.
pub fn plan_sample(
    sample: &Sample,
    issues: &[Issue],
    kinds: &[InterventionKind],
) -> Result<InterventionPlan, InterveneError> {
    let targeted: Vec<&Issue> = issues
        .iter()
        .filter(|i| i.sample_id == sample.id && i.is_targeted())
        .collect();
    let mut plan = InterventionPlan::default();
    if targeted.is_empty() {
        return Ok(plan);
    }
    let tok = tokenize_trace(&sample.trace);
    let spans: Vec<Option<EditSpan>> = targeted
        .iter()
        .map(|i| locate_issue_edit_span(i, &sample.trace, &tok))
        .collect();
    for &kind in kinds {
        match kind {
            InterventionKind::Hedging | InterventionKind::Removal | InterventionKind::Rereason => {
                for (issue, span) in targeted.iter().zip(&spans) {
                    let Some(span) = span else {
                        plan.skipped.push(SkippedIssue {
                            sample_id: sample.id.clone(),
                            issue_id: issue.id(),
                            kind,
                            reason: "span not locatable".to_string(),
                        });
                        continue;
                    };
                    plan.specs.push(match kind {
                        InterventionKind::Hedging => hedging_spec(sample, issue, span),
                        InterventionKind::Removal => removal_spec(sample, issue, span),
                        _ => rereason_spec(sample, issue, span),
                    });
                }
            }
            InterventionKind::Hindsight => plan.specs.push(hindsight_spec(sample, &targeted)?),
            InterventionKind::OracleOne => plan.specs.extend(oracle_specs(sample, &targeted, OracleMode::One)),
            InterventionKind::OracleK => plan.specs.extend(oracle_specs(sample, &targeted, OracleMode::K)),
        }
    }
    Ok(plan)
}
