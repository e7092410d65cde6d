//! Count fixtures whose rendered statistics are known in advance.
//!
//! Every builder produces raw records (issues, verdicts, annotations) and the
//! checks run them through the same aggregation code the CLI uses.

use std::path::Path;

use traceaudit_core::annotate::records::{
    AnnotationRecord, Confidence, ErrorLabel, IsError, Phase1Record, Phase1Verdict, Phase2Record, Reflected,
};
use traceaudit_core::annotate::stats::{
    majority, render_validation, summarize_validation, Majority, ValidationSummary,
};
use traceaudit_core::backend::{MockBackend, MockReply};
use traceaudit_core::corpus::{LanguagePair, Sample};
use traceaudit_core::evaluate::report::{
    aggregate, detection_rows, format_delta, format_percent, format_rate, render_detection, render_report, DeltaRecord,
    VerdictRecord,
};
use traceaudit_core::intervene::InterventionKind;
use traceaudit_core::judge::{Issue, IssueCategory, Severity};
use traceaudit_core::pipeline::{run_fix_judge, run_intervene, run_replay, StageContext};

pub type Outcome = (String, Result<(), String>);

fn outcome(name: &str, check: impl FnOnce() -> Result<(), String>) -> Outcome {
    (name.to_string(), check())
}

fn expect_eq<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: expected {want:?}, got {got:?}"))
    }
}

fn expect_contains(what: &str, text: &str, needle: &str) -> Result<(), String> {
    if text.contains(needle) {
        Ok(())
    } else {
        Err(format!("{what}: {needle:?} missing from\n{text}"))
    }
}

pub fn sample(id: &str, pair: (&str, &str), model: &str) -> Sample {
    Sample {
        id: id.to_string(),
        pair: LanguagePair::new(pair.0, pair.1).unwrap(),
        source: format!("Source text {id}."),
        trace: "First step. Second step. Third step.".to_string(),
        output: format!("Output {id}."),
        reference: Some(format!("Reference {id}.")),
        model_tag: model.to_string(),
    }
}

pub fn issue(sample_id: &str, idx: usize, severity: Severity) -> Issue {
    Issue {
        sample_id: sample_id.to_string(),
        category: IssueCategory::InputTrace,
        trace_sentence_idx: idx,
        trace_quote: String::new(),
        source_quote: None,
        output_quote: None,
        rationale: "fixture".to_string(),
        severity,
        votes: 3,
        quote_unverified: false,
    }
}

/// `n` samples of which the first `errorful` carry ERROR issues adding up to
/// `total_errors`. Clean samples get one FIXED_LATER issue each, which must
/// not count.
fn detection_group(
    model: &str,
    pair: (&str, &str),
    n: usize,
    errorful: usize,
    total_errors: usize,
) -> (Vec<Sample>, Vec<Issue>) {
    let samples: Vec<Sample> = (0..n)
        .map(|i| sample(&format!("{model}-{}{}-{i:03}", pair.0, pair.1), pair, model))
        .collect();
    let mut issues = Vec::new();
    for k in 0..total_errors {
        let owner = &samples[k % errorful];
        issues.push(issue(&owner.id, k / errorful, Severity::Error));
    }
    for s in &samples[errorful..] {
        issues.push(issue(&s.id, 0, Severity::FixedLater));
    }
    (samples, issues)
}

fn detection_arithmetic() -> Outcome {
    outcome("detection rates and averages", || {
        let (mut samples, mut issues) = detection_group("qwen3-8b", ("en", "es"), 100, 56, 120);
        let (more_samples, more_issues) = detection_group("qwen3-8b", ("en", "ur"), 100, 97, 640);
        samples.extend(more_samples);
        issues.extend(more_issues);
        let rows = detection_rows(&samples, &issues).map_err(|e| e.to_string())?;
        expect_eq("row count", rows.len(), 2)?;
        let es = &rows[0].summary;
        let ur = &rows[1].summary;
        expect_eq("en-es n", es.n, 100)?;
        expect_eq("en-es errorful", es.n_with_errors, 56)?;
        expect_eq("en-es rate", format_percent(es.error_rate), "56.0%".to_string())?;
        expect_eq(
            "en-es avg errors",
            format!("{:.2}", es.avg_errors_per_sample),
            "1.20".to_string(),
        )?;
        expect_eq("en-ur errorful", ur.n_with_errors, 97)?;
        expect_eq("en-ur rate", format_percent(ur.error_rate), "97.0%".to_string())?;
        expect_eq("en-ur total", ur.total_errors, 640)?;
        expect_eq(
            "en-ur avg errors",
            format!("{:.2}", ur.avg_errors_per_sample),
            "6.40".to_string(),
        )?;
        expect_eq("en-ur avg steps", format!("{:.2}", ur.avg_steps), "3.00".to_string())?;
        let table = render_detection(&rows);
        expect_contains("detection table", &table, "56.0%")?;
        expect_contains("detection table", &table, "6.40")
    })
}

/// Resolved counts and mean deltas for one model and pair, one row per kind.
pub const INTERVENTION_ROWS: [(InterventionKind, usize, f64); 6] = [
    (InterventionKind::Hedging, 2, 0.0),
    (InterventionKind::Removal, 5, 0.0008),
    (InterventionKind::Rereason, 75, -0.0024),
    (InterventionKind::OracleOne, 47, 0.0038),
    (InterventionKind::OracleK, 45, 0.0025),
    (InterventionKind::Hindsight, 125, 0.0088),
];

pub fn intervention_records(total: usize) -> (Vec<VerdictRecord>, Vec<DeltaRecord>) {
    let mut verdicts = Vec::new();
    let mut deltas = Vec::new();
    for (kind, resolved, delta) in INTERVENTION_ROWS {
        for i in 0..total {
            let spec_id = format!("{kind}-{i:03}");
            let sample_id = format!("s{i:03}");
            verdicts.push(VerdictRecord {
                spec_id: spec_id.clone(),
                model_tag: "qwen3-8b".to_string(),
                pair: "en-de".to_string(),
                kind,
                sample_id: sample_id.clone(),
                issue_id: format!("{sample_id}:INPUT_TRACE:0"),
                resolved: i < resolved,
                evidence: String::new(),
            });
            deltas.push(DeltaRecord {
                spec_id,
                model_tag: "qwen3-8b".to_string(),
                pair: "en-de".to_string(),
                kind,
                sample_id,
                metric: "chrf".to_string(),
                baseline: 0.5,
                intervened: 0.5 + delta,
                delta,
            });
        }
    }
    (verdicts, deltas)
}

fn intervention_arithmetic() -> Outcome {
    outcome("intervention rates, deltas and best marks", || {
        let (verdicts, deltas) = intervention_records(149);
        let report = aggregate(&verdicts, &deltas).map_err(|e| e.to_string())?;
        expect_eq("row count", report.rows.len(), 6)?;
        let want = [
            (InterventionKind::Hedging, "1.3%", "0.0000"),
            (InterventionKind::Removal, "3.4%", "+0.0008"),
            (InterventionKind::Rereason, "50.3%", "-0.0024"),
            (InterventionKind::OracleOne, "31.5%", "+0.0038"),
            (InterventionKind::OracleK, "30.2%", "+0.0025"),
            (InterventionKind::Hindsight, "83.9%", "+0.0088"),
        ];
        for (kind, rate, delta) in want {
            let row = report
                .rows
                .iter()
                .find(|r| r.kind == kind)
                .ok_or_else(|| format!("no {kind} row"))?;
            expect_eq(&format!("{kind} total"), row.total, 149)?;
            expect_eq(
                &format!("{kind} rate"),
                format_rate(row.resolved, row.total),
                rate.to_string(),
            )?;
            expect_eq(
                &format!("{kind} rate field"),
                format_percent(row.rate),
                rate.to_string(),
            )?;
            let mean = row.mean_delta.ok_or_else(|| format!("{kind} has no delta"))?;
            expect_eq(&format!("{kind} delta"), format_delta(mean), delta.to_string())?;
            let best = kind == InterventionKind::Hindsight;
            expect_eq(&format!("{kind} best rate"), row.best_rate, best)?;
            expect_eq(&format!("{kind} best delta"), row.best_delta, best)?;
        }
        let table = render_report(&report);
        expect_contains("report", &table, "2 / 149")?;
        expect_contains("report", &table, "83.9%*")?;
        expect_contains("report", &table, "+0.0088*")
    })
}

fn ts() -> String {
    "2026-01-01T00:00:00Z".to_string()
}

fn phase1(sample_id: &str, annotator: usize, verdict: Phase1Verdict) -> AnnotationRecord {
    let span = (verdict == Phase1Verdict::NotOk).then(|| "span".to_string());
    AnnotationRecord::Phase1(Phase1Record {
        sample_id: sample_id.to_string(),
        annotator_id: format!("a{annotator}"),
        verdict,
        source_error_span: span.clone(),
        translation_error_span: span,
        confidence: Confidence::Confident,
        timestamp: ts(),
    })
}

fn phase2(issue_id: &str, annotator: usize, is_error: IsError, reflected: Reflected) -> AnnotationRecord {
    AnnotationRecord::Phase2(Phase2Record {
        issue_id: issue_id.to_string(),
        annotator_id: format!("a{annotator}"),
        is_error,
        confidence: Confidence::Somewhat,
        reflected: (is_error != IsError::No).then_some(reflected),
        categories: vec![if is_error == IsError::No {
            ErrorLabel::NoIssue
        } else {
            ErrorLabel::SourceMisinterpretation
        }],
        free_text: None,
        timestamp: ts(),
    })
}

#[derive(Debug, Clone, Copy)]
enum Outcome1 {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, Copy)]
enum Outcome2 {
    Yes,
    Borderline,
    No,
    Tie,
}

fn votes1(outcome: Outcome1) -> [Phase1Verdict; 3] {
    use Phase1Verdict::*;
    match outcome {
        Outcome1::Yes => [Ok, Ok, NotOk],
        Outcome1::No => [NotOk, NotOk, Ok],
        Outcome1::Unsure => [Unsure, Unsure, Ok],
    }
}

fn votes2(outcome: Outcome2) -> [IsError; 3] {
    use IsError::*;
    match outcome {
        Outcome2::Yes => [Yes, Yes, No],
        Outcome2::Borderline => [Borderline, Borderline, Yes],
        Outcome2::No => [No, No, Yes],
        Outcome2::Tie => [Yes, No, Borderline],
    }
}

/// One language's worth of annotated samples and issues. Phase 1 outcomes
/// are given as (yes, no, unsure) counts and phase 2 as
/// (yes, borderline, no, tie).
fn annotated_language(
    pair: (&str, &str),
    phase1_counts: (usize, usize, usize),
    phase2_counts: (usize, usize, usize, usize),
) -> (Vec<Sample>, Vec<Issue>, Vec<AnnotationRecord>) {
    let (y1, n1, u1) = phase1_counts;
    let (y2, b2, n2, t2) = phase2_counts;
    let n_samples = y1 + n1 + u1;
    let samples: Vec<Sample> = (0..n_samples)
        .map(|i| sample(&format!("{}-{i:03}", pair.1), pair, "qwen3-8b"))
        .collect();
    let mut records = Vec::new();
    let plan1 = std::iter::repeat_n(Outcome1::Yes, y1)
        .chain(std::iter::repeat_n(Outcome1::No, n1))
        .chain(std::iter::repeat_n(Outcome1::Unsure, u1));
    for (s, outcome) in samples.iter().zip(plan1) {
        for (a, verdict) in votes1(outcome).into_iter().enumerate() {
            records.push(phase1(&s.id, a, verdict));
        }
    }
    let plan2: Vec<Outcome2> = std::iter::repeat_n(Outcome2::Yes, y2)
        .chain(std::iter::repeat_n(Outcome2::Borderline, b2))
        .chain(std::iter::repeat_n(Outcome2::No, n2))
        .chain(std::iter::repeat_n(Outcome2::Tie, t2))
        .collect();
    let mut issues = Vec::new();
    for (k, outcome) in plan2.into_iter().enumerate() {
        let owner = &samples[k % n_samples];
        let issue = issue(&owner.id, k / n_samples, Severity::Error);
        for (a, is_error) in votes2(outcome).into_iter().enumerate() {
            records.push(phase2(&issue.id(), a, is_error, Reflected::Yes));
        }
        issues.push(issue);
    }
    (samples, issues, records)
}

pub fn validation_fixture() -> (Vec<Sample>, Vec<Issue>, Vec<AnnotationRecord>) {
    let (mut samples, mut issues, mut records) = annotated_language(("en", "es"), (24, 5, 1), (29, 2, 22, 5));
    let (s, i, r) = annotated_language(("en", "ur"), (0, 28, 2), (176, 3, 3, 7));
    samples.extend(s);
    issues.extend(i);
    records.extend(r);
    (samples, issues, records)
}

fn cell(n: usize, total: usize) -> String {
    format!("{n}/{total} ({})", format_rate(n, total))
}

fn check_language(s: &ValidationSummary, want1: [&str; 3], want2: [&str; 4]) -> Result<(), String> {
    let c = &s.correctness;
    let v = &s.validation;
    let got1 = [cell(c.yes, c.total()), cell(c.no, c.total()), cell(c.unsure, c.total())];
    let got2 = [
        cell(v.yes_only(), v.total()),
        cell(v.yes_or_borderline(), v.total()),
        cell(v.no, v.total()),
        cell(v.tie, v.total()),
    ];
    expect_eq(
        &format!("{} correctness", s.language),
        got1.to_vec(),
        want1.map(String::from).to_vec(),
    )?;
    expect_eq(
        &format!("{} validation", s.language),
        got2.to_vec(),
        want2.map(String::from).to_vec(),
    )
}

fn validation_arithmetic() -> Outcome {
    outcome("human validation counts", || {
        let (samples, issues, records) = validation_fixture();
        let summaries = summarize_validation(&records, &issues, &samples).map_err(|e| e.to_string())?;
        expect_eq(
            "languages",
            summaries.iter().map(|s| s.language.as_str()).collect::<Vec<_>>(),
            vec!["en-es", "en-ur"],
        )?;
        check_language(
            &summaries[0],
            ["24/30 (80.0%)", "5/30 (16.7%)", "1/30 (3.3%)"],
            ["29/58 (50.0%)", "31/58 (53.4%)", "22/58 (37.9%)", "5/58 (8.6%)"],
        )?;
        check_language(
            &summaries[1],
            ["0/30 (0.0%)", "28/30 (93.3%)", "2/30 (6.7%)"],
            ["176/189 (93.1%)", "179/189 (94.7%)", "3/189 (1.6%)", "7/189 (3.7%)"],
        )?;
        for s in &summaries {
            if !s.coverage_warnings.is_empty() {
                return Err(format!("{}: unexpected coverage warnings", s.language));
            }
        }
        let table = render_validation(&summaries);
        expect_contains("validation table", &table, "176/189 (93.1%)")?;
        expect_contains("validation table", &table, "29/58 (50.0%)")
    })
}

fn tie_and_reflection() -> Outcome {
    outcome("three-way ties and reflection denominators", || {
        expect_eq(
            "YES/NO/BORDERLINE majority",
            majority(&[IsError::Yes, IsError::No, IsError::Borderline]).map_err(|e| e.to_string())?,
            Majority::Tie,
        )?;
        expect_eq(
            "YES/YES/NO majority",
            majority(&[IsError::Yes, IsError::Yes, IsError::No]).map_err(|e| e.to_string())?,
            Majority::Label(IsError::Yes),
        )?;
        let s = sample("r-000", ("en", "es"), "m");
        let i = issue(&s.id, 0, Severity::Error);
        let records = vec![
            phase2(&i.id(), 0, IsError::Yes, Reflected::Yes),
            phase2(&i.id(), 1, IsError::No, Reflected::Yes),
            phase2(&i.id(), 2, IsError::Borderline, Reflected::No),
        ];
        let summaries = summarize_validation(&records, &[i], &[s]).map_err(|e| e.to_string())?;
        let summary = summaries.first().ok_or("no summary")?;
        expect_eq("tie count", summary.validation.tie, 1)?;
        expect_eq("reflection denominator", summary.reflection.total(), 2)?;
        expect_eq("reflected yes", summary.reflection.yes, 1)?;
        expect_eq("reflected no", summary.reflection.no, 1)
    })
}

pub const RESOLVED_MARK: &str = "RESOLVED-MARK";

/// 149 en-de samples, each with one source-misreading issue. The scripted
/// translator fixes two of them; the scripted judge keeps finding the issue
/// in every other replay.
pub fn hedging_pipeline(progress_dir: &Path) -> Result<(usize, usize, String), String> {
    let samples: Vec<Sample> = (0..149)
        .map(|i| Sample {
            id: format!("de-{i:03}"),
            pair: LanguagePair::new("en", "de").unwrap(),
            source: format!("The bank #{i:03} raised its rates."),
            trace: "Bank means riverbank. I will use Ufer.".to_string(),
            output: "Das Ufer erhöhte die Zinsen.".to_string(),
            reference: Some("Die Bank erhöhte die Zinsen.".to_string()),
            model_tag: "qwen3-8b".to_string(),
        })
        .collect();
    let issues: Vec<Issue> = samples
        .iter()
        .map(|s| Issue {
            trace_quote: "Bank means riverbank.".to_string(),
            source_quote: Some("bank".to_string()),
            ..issue(&s.id, 0, Severity::Error)
        })
        .collect();
    let translator = MockBackend::new("translator").with_responder(|req| {
        let fixed = req.user.contains("#000") || req.user.contains("#001");
        Some(MockReply::text(if fixed {
            format!("Die Bank erhöhte die Zinsen. {RESOLVED_MARK}")
        } else {
            "Das Ufer erhöhte die Zinsen.".to_string()
        }))
    });
    let judge = MockBackend::new("judge").with_responder(|req| {
        Some(MockReply::text(if req.user.contains(RESOLVED_MARK) {
            r#"{"has_issues": false, "summary": "clean", "issues": []}"#.to_string()
        } else {
            r#"{"has_issues": true, "summary": "misread", "issues": [{"category": "INPUT_TRACE",
                "trace_sentence_idx": 0, "trace_quote": "Bank means riverbank.", "source_quote": "bank",
                "output_quote": null, "rationale": "Still a riverbank."}]}"#
                .to_string()
        }))
    });
    let ctx = StageContext::new(4, false).map_err(|e| e.to_string())?;
    let (specs, skipped) = run_intervene(&samples, &issues, &[InterventionKind::Hedging]).map_err(|e| e.to_string())?;
    if !skipped.is_empty() {
        return Err(format!("{} issues skipped", skipped.len()));
    }
    let replays = run_replay(
        &ctx,
        &samples,
        &specs,
        &translator,
        &progress_dir.join("replay.progress.jsonl"),
    )
    .map_err(|e| e.to_string())?;
    let verdicts = run_fix_judge(
        &ctx,
        &samples,
        &issues,
        &replays,
        &judge,
        &progress_dir.join("score.progress.jsonl"),
    )
    .map_err(|e| e.to_string())?;
    let report = aggregate(&verdicts, &[]).map_err(|e| e.to_string())?;
    let row = report.rows.first().ok_or("empty report")?;
    Ok((row.resolved, row.total, format_rate(row.resolved, row.total)))
}

pub fn cases() -> Vec<Outcome> {
    vec![
        detection_arithmetic(),
        intervention_arithmetic(),
        validation_arithmetic(),
    ]
}

pub fn annotation_cases() -> Vec<Outcome> {
    vec![tie_and_reflection()]
}
