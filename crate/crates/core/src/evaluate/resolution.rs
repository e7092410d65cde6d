//! Fix-judging: does a replay still exhibit the targeted issue?

use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::corpus::{tokenize_trace, Sample};
use crate::intervene::InterventionKind;
use crate::judge::{judge_once, Issue, JudgeError, RawIssue, Severity};
use crate::locate::{locate_quote, normalize};

pub const FIX_JUDGE_FAILED: &str = "fix-judge failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionVerdict {
    pub issue_id: String,
    pub kind: InterventionKind,
    pub resolved: bool,
    pub evidence: String,
}

/// Whether `candidate`, found in `new_trace`, is the same problem as
/// `original`.
///
/// Categories must agree. When both carry a source quote, the normalized
/// quotes must overlap by containment. Otherwise the original trace quote is
/// located in the new trace and the candidate must point into the located
/// sentences; if it cannot be located, sentence indices are compared.
pub fn same_issue(original: &Issue, candidate: &RawIssue, new_trace: &str) -> bool {
    if original.category != candidate.category {
        return false;
    }
    let quotes = (
        original
            .source_quote
            .as_deref()
            .map(normalize)
            .filter(|q| !q.is_empty()),
        candidate
            .source_quote
            .as_deref()
            .map(normalize)
            .filter(|q| !q.is_empty()),
    );
    if let (Some(a), Some(b)) = quotes {
        return a.contains(&b) || b.contains(&a);
    }
    let tok = tokenize_trace(new_trace);
    let located = if original.trace_quote.trim().is_empty() {
        None
    } else {
        locate_quote(&original.trace_quote, original.trace_sentence_idx, new_trace, &tok)
            .filter(|span| span.matched_by != crate::locate::MatchedBy::SentenceIndex)
    };
    match located {
        Some(span) => span.contains_sentence(candidate.trace_sentence_idx),
        None => candidate.trace_sentence_idx == original.trace_sentence_idx,
    }
}

/// Re-runs the judge once, greedily, on the replayed trace and output.
///
/// Only ERROR-severity findings can keep an issue open. A response that
/// fails schema validation counts as unresolved; backend errors propagate.
pub fn judge_resolution(
    original: &Sample,
    issue: &Issue,
    kind: InterventionKind,
    new_trace: &str,
    new_output: &str,
    backend: &dyn ChatBackend,
) -> Result<ResolutionVerdict, JudgeError> {
    let verdict = |resolved, evidence: String| ResolutionVerdict {
        issue_id: issue.id(),
        kind,
        resolved,
        evidence,
    };
    let judgment = match judge_once(&original.source, new_trace, new_output, backend) {
        Ok(j) => j,
        Err(JudgeError::Schema(e)) => {
            log::warn!("{}: {FIX_JUDGE_FAILED}: {e}", issue.id());
            return Ok(verdict(false, FIX_JUDGE_FAILED.to_string()));
        }
        Err(e) => return Err(e),
    };
    let hit = judgment
        .issues
        .iter()
        .filter(|c| c.severity == Severity::Error)
        .find(|c| same_issue(issue, c, new_trace));
    Ok(match hit {
        Some(c) => verdict(false, c.rationale.clone()),
        None if judgment.issues.is_empty() => verdict(true, "no issues found".to_string()),
        None => verdict(true, format!("{} unrelated issue(s)", judgment.issues.len())),
    })
}
