//! Strategies and property checks. Each `check_*` takes one generated case
//! and fails through `prop_assert!`, so the same code runs under the
//! `proptest!` macro and under an explicit `TestRunner`.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use traceaudit_core::corpus::{tokenize_trace, LanguagePair, Sample};
use traceaudit_core::evaluate::chrf;
use traceaudit_core::intervene::{
    collapse_blank_lines, hedge, plan_sample, remove, rereason_prefix, InterventionKind, HEDGE_PREFIX,
};
use traceaudit_core::judge::{aggregate_votes, Issue, IssueCategory, RawIssue, RawJudgment, Severity};
use traceaudit_core::locate::{locate_issue_edit_span, locate_quote, normalize, EditSpan, MatchedBy};

use super::chrf_oracle::brute_chrf;

/// Runs `check` on `cases` inputs from a fixed-seed generator.
pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

// ---- traces ----

const WORDS: &[&str] = &[
    "The",
    "word",
    "bank",
    "means",
    "riverbank",
    "e.g.",
    "Dr.",
    "3.50",
    "Ufer",
    "quill",
    "pluma",
    "\u{201C}Run!\u{201D}",
    "(aside)",
    "naïve",
    "über",
    "字",
    "意思",
    "ہیں",
    "maybe",
    "it",
    "No.",
    "etc.",
    "12",
];
const SEPARATORS: &[&str] = &[
    " ", " ", " ", " ", ". ", ". ", "! ", "? ", "... ", "\n", "\n\n", "。", "\n  \n", ", ", "؟ ", ".\n", "\t",
];

/// Trace-like text mixing terminators, abbreviations, CJK and blank lines.
pub fn trace() -> impl Strategy<Value = String> {
    prop::collection::vec((prop::sample::select(WORDS), prop::sample::select(SEPARATORS)), 0..30)
        .prop_map(|parts| parts.into_iter().map(|(w, s)| format!("{w}{s}")).collect())
}

pub fn any_text() -> impl Strategy<Value = String> {
    prop_oneof![trace(), any::<String>(), "[ a-zA-Z.!?\n]{0,60}"]
}

/// Spans are ordered, trimmed and disjoint; gaps are whitespace; splicing
/// gaps and sentences reproduces the input.
pub fn check_tokenization(text: String) -> Result<(), TestCaseError> {
    let tok = tokenize_trace(&text);
    let mut rebuilt = String::new();
    let mut cursor = 0;
    for (i, s) in tok.sentences.iter().enumerate() {
        let (a, b) = s.span;
        prop_assert_eq!(s.index, i);
        prop_assert!(cursor <= a && a < b && b <= text.len());
        let gap = &text[cursor..a];
        prop_assert!(gap.chars().all(char::is_whitespace), "non-whitespace gap {:?}", gap);
        prop_assert_eq!(&text[a..b], s.text.as_str());
        prop_assert!(!s.text.starts_with(char::is_whitespace) && !s.text.ends_with(char::is_whitespace));
        rebuilt.push_str(gap);
        rebuilt.push_str(&s.text);
        cursor = b;
    }
    prop_assert!(text[cursor..].chars().all(char::is_whitespace));
    rebuilt.push_str(&text[cursor..]);
    prop_assert_eq!(&rebuilt, &text);
    prop_assert_eq!(tokenize_trace(&text), tok);
    Ok(())
}

pub fn check_normalize_idempotent(text: String) -> Result<(), TestCaseError> {
    let once = normalize(&text);
    prop_assert_eq!(normalize(&once), once);
    Ok(())
}

/// A trace with at least one sentence, a sentence index in range and a
/// char-aligned fragment of that sentence.
pub fn trace_with_quote() -> impl Strategy<Value = (String, usize, String)> {
    trace()
        .prop_filter("needs a sentence", |t| !tokenize_trace(t).is_empty())
        .prop_flat_map(|t| {
            let n = tokenize_trace(&t).len();
            (
                Just(t),
                0..n,
                any::<prop::sample::Index>(),
                any::<prop::sample::Index>(),
            )
        })
        .prop_map(|(t, idx, a, b)| {
            let sentence = tokenize_trace(&t).sentences[idx].text.clone();
            let bounds: Vec<usize> = sentence
                .char_indices()
                .map(|(i, _)| i)
                .chain([sentence.len()])
                .collect();
            let (mut x, mut y) = (a.index(bounds.len()), b.index(bounds.len()));
            if x > y {
                std::mem::swap(&mut x, &mut y);
            }
            let quote = sentence[bounds[x]..bounds[y]].to_string();
            (t, idx, quote)
        })
}

pub fn check_locator((text, idx, quote): (String, usize, String)) -> Result<(), TestCaseError> {
    let tok = tokenize_trace(&text);
    let span = locate_quote(&quote, idx, &text, &tok);
    prop_assert!(span.is_some(), "in-range index must always locate");
    let span = span.unwrap();
    let (first, last) = span.sentences;
    prop_assert_eq!(span.span, (tok.sentences[first].span.0, tok.sentences[last].span.1));
    let located = &text[span.span.0..span.span.1];
    if quote.trim().is_empty() {
        prop_assert_eq!(span.matched_by, MatchedBy::SentenceIndex);
        prop_assert_eq!(span.sentences, (idx, idx));
    } else {
        prop_assert_eq!(span.matched_by, MatchedBy::QuoteExact);
        prop_assert!(located.contains(&quote));
        let noisy = quote.to_uppercase().replace(' ', "  ");
        if let Some(alt) = locate_quote(&noisy, idx, &text, &tok) {
            if alt.matched_by != MatchedBy::SentenceIndex {
                let found = normalize(&text[alt.span.0..alt.span.1]);
                prop_assert!(found.contains(&normalize(&noisy)));
            }
        }
    }
    Ok(())
}

// ---- interventions ----

#[derive(Debug, Clone)]
pub struct IssueSeed {
    category: usize,
    idx: usize,
    /// 0: fragment of the sentence, 1: text absent from the trace, 2: empty.
    quote_mode: u8,
    fixed_later: bool,
}

fn issue_seed() -> impl Strategy<Value = IssueSeed> {
    (0usize..3, 0usize..10, 0u8..3, prop::bool::weighted(0.2)).prop_map(|(category, idx, quote_mode, fixed_later)| {
        IssueSeed {
            category,
            idx,
            quote_mode,
            fixed_later,
        }
    })
}

pub fn intervention_case() -> impl Strategy<Value = (Sample, Vec<Issue>)> {
    (trace(), prop::collection::vec(issue_seed(), 0..6)).prop_map(|(text, seeds)| {
        let sample = Sample {
            id: "p".to_string(),
            pair: LanguagePair::new("en", "de").unwrap(),
            source: "The bank raised its rates.".to_string(),
            trace: text,
            output: "Die Bank erhöhte ihre Zinsen.".to_string(),
            reference: Some("Die Bank hob ihre Zinsen an.".to_string()),
            model_tag: "m".to_string(),
        };
        let tok = tokenize_trace(&sample.trace);
        let mut keys = BTreeSet::new();
        let issues = seeds
            .into_iter()
            .filter(|s| keys.insert((s.category, s.idx)))
            .map(|s| {
                let quote = match (s.quote_mode, tok.sentences.get(s.idx)) {
                    (0, Some(sentence)) => sentence.text.chars().take(12).collect(),
                    (1, _) => "«absent quote»".to_string(),
                    _ => String::new(),
                };
                Issue {
                    sample_id: sample.id.clone(),
                    category: IssueCategory::ALL[s.category],
                    trace_sentence_idx: s.idx,
                    trace_quote: quote,
                    source_quote: Some("bank".to_string()),
                    output_quote: None,
                    rationale: format!("issue at {}", s.idx),
                    severity: if s.fixed_later {
                        Severity::FixedLater
                    } else {
                        Severity::Error
                    },
                    votes: 3,
                    quote_unverified: false,
                }
            })
            .collect();
        (sample, issues)
    })
}

fn starts_with_hedge(sentence: &str) -> bool {
    let lower = sentence.to_lowercase();
    ["maybe", "possibly", "perhaps", "it may be"]
        .iter()
        .any(|w| lower.starts_with(w))
}

fn no_blank_runs(text: &str) -> bool {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    !lines
        .windows(2)
        .any(|w| w[0].trim().is_empty() && w[1].trim().is_empty())
}

fn check_hedge(text: &str, span: &EditSpan) -> Result<(), TestCaseError> {
    let (a, b) = span.span;
    let sentence = &text[a..b];
    let hedged = hedge(text, span);
    if starts_with_hedge(sentence) {
        prop_assert_eq!(&hedged, text);
        return Ok(());
    }
    let expected = format!("{}{HEDGE_PREFIX}: {sentence}{}", &text[..a], &text[b..]);
    prop_assert_eq!(&hedged, &expected);
    let grown = EditSpan {
        span: (a, b + HEDGE_PREFIX.len() + 2),
        ..span.clone()
    };
    prop_assert_eq!(hedge(&hedged, &grown), hedged.clone(), "hedging is not idempotent");
    Ok(())
}

fn check_remove(text: &str, span: &EditSpan) -> Result<(), TestCaseError> {
    let (a, b) = span.span;
    let removed = remove(text, span);
    let inline = |c: char| c == ' ' || c == '\t';
    let before = [a, text[..a].trim_end_matches(inline).len()];
    let after = [b, text.len() - text[b..].trim_start_matches(inline).len()];
    let local = before.iter().any(|&x| {
        after
            .iter()
            .any(|&y| removed == collapse_blank_lines(&format!("{}{}", &text[..x], &text[y..])))
    });
    prop_assert!(local, "removal touched text outside the span: {:?}", removed);
    prop_assert!(no_blank_runs(&removed));
    prop_assert!(removed.len() < text.len());
    Ok(())
}

fn check_rereason(text: &str, span: &EditSpan) -> Result<(), TestCaseError> {
    let prefix = rereason_prefix(text, span);
    prop_assert_eq!(&prefix, &collapse_blank_lines(&text[..span.span.0]));
    let before: Vec<String> = tokenize_trace(text).sentences[..span.sentences.0]
        .iter()
        .map(|s| s.text.clone())
        .collect();
    let kept: Vec<String> = tokenize_trace(&prefix).sentences.into_iter().map(|s| s.text).collect();
    prop_assert_eq!(kept, before, "prefix must hold exactly the sentences before the span");
    Ok(())
}

pub fn check_interventions((sample, issues): (Sample, Vec<Issue>)) -> Result<(), TestCaseError> {
    let original = sample.clone();
    let tok = tokenize_trace(&sample.trace);
    let targeted: Vec<&Issue> = issues.iter().filter(|i| i.severity == Severity::Error).collect();
    let spans: Vec<Option<EditSpan>> = targeted
        .iter()
        .map(|i| locate_issue_edit_span(i, &sample.trace, &tok))
        .collect();
    for span in spans.iter().flatten() {
        check_hedge(&sample.trace, span)?;
        check_remove(&sample.trace, span)?;
        check_rereason(&sample.trace, span)?;
    }

    let plan = plan_sample(&sample, &issues, &InterventionKind::ALL).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&sample, &original, "planning mutated the sample");
    let count = |kind| plan.specs.iter().filter(|s| s.kind == kind).count();
    let per_sample = usize::from(!targeted.is_empty());
    prop_assert_eq!(count(InterventionKind::Hindsight), per_sample);
    prop_assert_eq!(count(InterventionKind::OracleK), per_sample);
    prop_assert_eq!(count(InterventionKind::OracleOne), targeted.len());
    let locatable = spans.iter().filter(|s| s.is_some()).count();
    for kind in [
        InterventionKind::Hedging,
        InterventionKind::Removal,
        InterventionKind::Rereason,
    ] {
        prop_assert_eq!(count(kind), locatable);
        let skipped = plan.skipped.iter().filter(|s| s.kind == kind).count();
        prop_assert_eq!(skipped, targeted.len() - locatable);
    }
    prop_assert!(plan.skipped.iter().all(|s| s.kind.needs_span()));
    for spec in &plan.specs {
        prop_assert!(spec
            .target_issue_ids
            .iter()
            .all(|id| targeted.iter().any(|i| &i.id() == id)));
        match spec.kind {
            InterventionKind::OracleOne => {
                prop_assert_eq!(&spec.edited_trace, &sample.trace);
                prop_assert_eq!(spec.extra_notes.len(), 1);
            }
            InterventionKind::OracleK => {
                prop_assert_eq!(&spec.edited_trace, &sample.trace);
                prop_assert_eq!(spec.extra_notes.len(), targeted.len() + 1);
                prop_assert_eq!(spec.target_issue_ids.len(), targeted.len());
            }
            InterventionKind::Hindsight => prop_assert_eq!(spec.target_issue_ids.len(), targeted.len()),
            _ => prop_assert!(spec.extra_notes.is_empty()),
        }
    }
    Ok(())
}

/// Sentences that open with a hedge word, in any casing.
pub fn hedged_sentence() -> impl Strategy<Value = String> {
    (
        prop::sample::select(&["maybe", "possibly", "perhaps", "it may be"][..]),
        prop::collection::vec(any::<bool>(), 10),
        "[a-z ]{0,20}",
    )
        .prop_map(|(word, upper, rest)| {
            let cased: String = word
                .chars()
                .zip(upper.iter().cycle())
                .map(|(c, &u)| if u { c.to_ascii_uppercase() } else { c })
                .collect();
            format!("{cased} {rest}.")
        })
}

pub fn check_hedge_bypass(sentence: String) -> Result<(), TestCaseError> {
    let text = format!("First step. {sentence} Last step.");
    let tok = tokenize_trace(&text);
    let span = locate_quote(&sentence, 1, &text, &tok).unwrap();
    prop_assert_eq!(hedge(&text, &span), text.clone());
    Ok(())
}

// ---- voting ----

pub type Vote = (usize, usize, bool);

/// k runs, each listing (category, sentence index, fixed-later) findings.
pub fn vote_runs() -> impl Strategy<Value = Vec<Vec<Vote>>> {
    (1usize..=7).prop_flat_map(|k| {
        prop::collection::vec(
            prop::collection::vec((0usize..3, 0usize..5, prop::bool::weighted(0.3)), 0..7),
            k,
        )
    })
}

fn judgments(runs: &[Vec<Vote>]) -> Vec<RawJudgment> {
    runs.iter()
        .enumerate()
        .map(|(r, votes)| RawJudgment {
            has_issues: !votes.is_empty(),
            summary: String::new(),
            issues: votes
                .iter()
                .enumerate()
                .map(|(j, &(c, idx, fixed))| RawIssue {
                    category: IssueCategory::ALL[c],
                    trace_sentence_idx: idx,
                    trace_quote: String::new(),
                    source_quote: None,
                    output_quote: None,
                    rationale: format!("run{r}-{j}"),
                    severity: if fixed { Severity::FixedLater } else { Severity::Error },
                    quote_unverified: false,
                })
                .collect(),
            run_index: r,
        })
        .collect()
}

struct Support {
    runs: usize,
    fixed_later: usize,
    first: String,
}

/// Independent tally: first finding per (category, index) in each run.
fn support(runs: &[Vec<Vote>]) -> BTreeMap<(usize, usize), Support> {
    let mut out: BTreeMap<(usize, usize), Support> = BTreeMap::new();
    for (r, votes) in runs.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for (j, &(c, idx, fixed)) in votes.iter().enumerate() {
            if !seen.insert((c, idx)) {
                continue;
            }
            let entry = out.entry((c, idx)).or_insert(Support {
                runs: 0,
                fixed_later: 0,
                first: format!("run{r}-{j}"),
            });
            entry.runs += 1;
            entry.fixed_later += usize::from(fixed);
        }
    }
    out
}

fn category_index(c: IssueCategory) -> usize {
    IssueCategory::ALL.iter().position(|x| *x == c).unwrap()
}

pub fn check_voting((runs, order): (Vec<Vec<Vote>>, Vec<usize>)) -> Result<(), TestCaseError> {
    let k = runs.len();
    let raw = judgments(&runs);
    let tally = support(&runs);
    let shuffled: Vec<RawJudgment> = order.iter().map(|&i| raw[i].clone()).collect();
    let mut previous: Option<Vec<Issue>> = None;
    for majority in 1..=k {
        let issues = aggregate_votes("s", &raw, majority);
        prop_assert_eq!(
            &aggregate_votes("s", &shuffled, majority),
            &issues,
            "run order changed the result"
        );
        let expected: BTreeSet<(usize, usize)> = tally
            .iter()
            .filter(|(_, s)| s.runs >= majority)
            .map(|(key, _)| *key)
            .collect();
        let got: BTreeSet<(usize, usize)> = issues
            .iter()
            .map(|i| (category_index(i.category), i.trace_sentence_idx))
            .collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(got.len(), issues.len());
        for issue in &issues {
            let s = &tally[&(category_index(issue.category), issue.trace_sentence_idx)];
            prop_assert!(issue.votes >= majority);
            prop_assert_eq!(issue.votes, s.runs);
            prop_assert_eq!(&issue.rationale, &s.first);
            let fixed = 2 * s.fixed_later > s.runs;
            prop_assert_eq!(issue.severity == Severity::FixedLater, fixed);
        }
        if majority == k {
            prop_assert!(issues.iter().all(|i| i.votes == k));
        }
        if majority == 1 {
            prop_assert_eq!(issues.len(), tally.len());
        }
        if let Some(prev) = &previous {
            prop_assert!(issues.len() <= prev.len());
            for issue in &issues {
                let before = prev
                    .iter()
                    .find(|p| p.category == issue.category && p.trace_sentence_idx == issue.trace_sentence_idx);
                prop_assert!(
                    before.is_some_and(|p| p.votes >= issue.votes),
                    "raising majority added votes"
                );
            }
        }
        previous = Some(issues);
    }
    Ok(())
}

pub fn voting_case() -> impl Strategy<Value = (Vec<Vec<Vote>>, Vec<usize>)> {
    vote_runs().prop_flat_map(|runs| {
        let order: Vec<usize> = (0..runs.len()).collect();
        (Just(runs), Just(order).prop_shuffle())
    })
}

// ---- chrF ----

pub fn chrf_pair() -> impl Strategy<Value = (String, String, usize, f64)> {
    let text = prop_oneof![
        "[abc ]{0,24}",
        "[a-e\u{e4}\u{f6}\u{fc}\u{5b57} \n]{1,40}",
        any::<String>().prop_map(|s| s.chars().take(30).collect::<String>()),
    ];
    (
        text.clone(),
        text.prop_filter("reference needs content", |r| r.chars().any(|c| !c.is_whitespace())),
        1usize..=6,
        prop::sample::select(&[0.5, 1.0, 2.0, 3.0][..]),
    )
}

/// Largest allowed gap between the built-in chrF and the brute-force oracle.
pub const CHRF_TOLERANCE: f64 = 1e-9;

pub fn check_chrf((hyp, reference, n, beta): (String, String, usize, f64)) -> Result<(), TestCaseError> {
    let got = chrf(&hyp, &reference, n, beta).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let want = brute_chrf(&hyp, &reference, n, beta).unwrap();
    prop_assert!((got - want).abs() <= CHRF_TOLERANCE, "chrf {} vs oracle {}", got, want);
    prop_assert!((0.0..=1.0).contains(&got));
    Ok(())
}

pub fn check_chrf_exact(text: String) -> Result<(), TestCaseError> {
    if text.chars().all(char::is_whitespace) {
        return Ok(());
    }
    prop_assert_eq!(chrf(&text, &text, 6, 2.0).unwrap(), 1.0);
    let upper: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            if c.is_ascii_lowercase() {
                c.to_ascii_uppercase()
            } else {
                'Q'
            }
        })
        .collect();
    let lower: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| if c.is_ascii_lowercase() { c } else { 'a' })
        .collect();
    prop_assert_eq!(chrf(&upper, &lower, 6, 2.0).unwrap(), 0.0);
    Ok(())
}
