//! Constructed locator cases covering the match priority and the skip rules.

use traceaudit_core::corpus::{tokenize_trace, LanguagePair, Sample};
use traceaudit_core::intervene::{plan_sample, InterventionKind};
use traceaudit_core::judge::{Issue, IssueCategory, Severity};
use traceaudit_core::locate::{locate_quote, EditSpan, MatchedBy};

const TRACE: &str =
    "The source says quill. It could mean feather. Maybe it means down. I pick pluma. Final check done.";

pub type Outcome = (String, Result<(), String>);

fn expect(name: &str, trace: &str, quote: &str, idx: usize, want: Option<(MatchedBy, (usize, usize))>) -> Outcome {
    let tok = tokenize_trace(trace);
    let got = locate_quote(quote, idx, trace, &tok);
    let summary = got.as_ref().map(|s| (s.matched_by, s.sentences));
    let result = if summary != want {
        Err(format!("expected {want:?}, got {summary:?}"))
    } else {
        got.as_ref().map_or(Ok(()), |span| aligned(trace, span))
    };
    (name.to_string(), result)
}

/// The span starts and ends on the boundaries of the sentences it names.
pub fn aligned(trace: &str, span: &EditSpan) -> Result<(), String> {
    let tok = tokenize_trace(trace);
    let (first, last) = span.sentences;
    let (Some(a), Some(b)) = (tok.sentences.get(first), tok.sentences.get(last)) else {
        return Err(format!("sentence range {first}..={last} out of bounds"));
    };
    if span.span != (a.span.0, b.span.1) {
        return Err(format!(
            "span {:?} is not aligned to sentences {first}..={last} ({:?})",
            span.span,
            (a.span.0, b.span.1)
        ));
    }
    Ok(())
}

fn issue(sample_id: &str, idx: usize, quote: &str) -> Issue {
    Issue {
        sample_id: sample_id.to_string(),
        category: IssueCategory::InputTrace,
        trace_sentence_idx: idx,
        trace_quote: quote.to_string(),
        source_quote: None,
        output_quote: None,
        rationale: "constructed".to_string(),
        severity: Severity::Error,
        votes: 3,
        quote_unverified: false,
    }
}

fn skip_rules() -> Outcome {
    let sample = Sample {
        id: "loc".to_string(),
        pair: LanguagePair::new("en", "es").unwrap(),
        source: "The quill is old.".to_string(),
        trace: TRACE.to_string(),
        output: "La pluma es vieja.".to_string(),
        reference: Some("La pluma es antigua.".to_string()),
        model_tag: "m".to_string(),
    };
    let lost = issue("loc", 40, "not in the trace at all");
    let found = issue("loc", 1, "mean feather");
    let plan = match plan_sample(&sample, &[lost.clone(), found.clone()], &InterventionKind::ALL) {
        Ok(plan) => plan,
        Err(e) => return ("skip rules".to_string(), Err(e.to_string())),
    };
    let check = || -> Result<(), String> {
        let mut skipped: Vec<InterventionKind> = plan.skipped.iter().map(|s| s.kind).collect();
        skipped.sort_by_key(|k| k.report_rank());
        let mut want = vec![
            InterventionKind::Hedging,
            InterventionKind::Removal,
            InterventionKind::Rereason,
        ];
        want.sort_by_key(|k| k.report_rank());
        if skipped != want || plan.skipped.iter().any(|s| s.issue_id != lost.id()) {
            return Err(format!("unexpected skips {:?}", plan.skipped));
        }
        let targets = |kind| {
            plan.specs
                .iter()
                .filter(|s| s.kind == kind)
                .any(|s| s.target_issue_ids.contains(&lost.id()))
        };
        for kind in [
            InterventionKind::OracleOne,
            InterventionKind::OracleK,
            InterventionKind::Hindsight,
        ] {
            if !targets(kind) {
                return Err(format!("{kind} does not target the unlocatable issue"));
            }
        }
        for kind in [
            InterventionKind::Hedging,
            InterventionKind::Removal,
            InterventionKind::Rereason,
        ] {
            if targets(kind) {
                return Err(format!("{kind} targets the unlocatable issue"));
            }
            if !plan
                .specs
                .iter()
                .any(|s| s.kind == kind && s.issue_id == Some(found.id()))
            {
                return Err(format!("{kind} skipped a locatable issue"));
            }
        }
        Ok(())
    };
    ("unlocatable issues skip span edits only".to_string(), check())
}

pub fn cases() -> Vec<Outcome> {
    vec![
        expect(
            "exact quote",
            TRACE,
            "mean feather",
            0,
            Some((MatchedBy::QuoteExact, (1, 1))),
        ),
        expect(
            "normalized quote",
            TRACE,
            "IT  COULD\nmean   feather",
            1,
            Some((MatchedBy::QuoteNormalized, (1, 1))),
        ),
        expect(
            "exact wins over normalized",
            "I Pick pluma. i pick  pluma again.",
            "i pick  pluma",
            0,
            Some((MatchedBy::QuoteExact, (1, 1))),
        ),
        expect(
            "normalized wins over index",
            TRACE,
            "I  PICK pluma",
            0,
            Some((MatchedBy::QuoteNormalized, (3, 3))),
        ),
        expect(
            "index fallback",
            TRACE,
            "no such words",
            2,
            Some((MatchedBy::SentenceIndex, (2, 2))),
        ),
        expect(
            "empty quote on one sentence",
            "Only one sentence here.",
            "",
            0,
            Some((MatchedBy::SentenceIndex, (0, 0))),
        ),
        expect("empty quote out of range", TRACE, "", 9, None),
        expect("missing quote out of range", TRACE, "no such words", 9, None),
        expect(
            "quote across sentences",
            TRACE,
            "feather. Maybe",
            0,
            Some((MatchedBy::QuoteExact, (1, 2))),
        ),
        skip_rules(),
    ]
}
