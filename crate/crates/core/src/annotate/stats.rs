//! Majority votes and validation statistics over annotation records.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::records::{
    AnnotationRecord, ErrorLabel, IsError, Phase, Phase1Record, Phase1Verdict, Phase2Record, Reflected,
};
use crate::corpus::Sample;
use crate::evaluate::format_percent;
use crate::judge::Issue;

pub const ANNOTATORS_PER_ITEM: usize = 3;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("majority needs exactly 3 labels, got {0}")]
    Arity(usize),
    #[error("record for unknown {phase} item {item:?}")]
    UnknownItem { phase: &'static str, item: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Majority<T> {
    Label(T),
    Tie,
}

/// A label held by at least two of three annotators wins; three distinct
/// labels tie.
pub fn majority<T: Copy + Eq>(labels: &[T]) -> Result<Majority<T>, StatsError> {
    if labels.len() != ANNOTATORS_PER_ITEM {
        return Err(StatsError::Arity(labels.len()));
    }
    let (a, b, c) = (labels[0], labels[1], labels[2]);
    Ok(if a == b || a == c {
        Majority::Label(a)
    } else if b == c {
        Majority::Label(b)
    } else {
        Majority::Tie
    })
}

/// Item-level correctness label; OK counts as YES and NOT_OK as NO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Correctness {
    Yes,
    No,
    Unsure,
}

impl From<Phase1Verdict> for Correctness {
    fn from(v: Phase1Verdict) -> Self {
        match v {
            Phase1Verdict::Ok => Self::Yes,
            Phase1Verdict::NotOk => Self::No,
            Phase1Verdict::Unsure => Self::Unsure,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessCounts {
    pub yes: usize,
    pub no: usize,
    pub unsure: usize,
    pub tie: usize,
}

impl CorrectnessCounts {
    pub fn total(&self) -> usize {
        self.yes + self.no + self.unsure + self.tie
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCounts {
    pub yes: usize,
    pub borderline: usize,
    pub no: usize,
    pub tie: usize,
}

impl ValidationCounts {
    pub fn total(&self) -> usize {
        self.yes + self.borderline + self.no + self.tie
    }

    pub fn yes_only(&self) -> usize {
        self.yes
    }

    pub fn yes_or_borderline(&self) -> usize {
        self.yes + self.borderline
    }
}

/// Reflection answers over individual YES/BORDERLINE annotations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionCounts {
    pub yes: usize,
    pub no: usize,
    pub not_applicable: usize,
}

impl ReflectionCounts {
    pub fn total(&self) -> usize {
        self.yes + self.no + self.not_applicable
    }

    fn add(&mut self, r: Reflected) {
        match r {
            Reflected::Yes => self.yes += 1,
            Reflected::No => self.no += 1,
            Reflected::NotApplicable => self.not_applicable += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub sum: f64,
    pub count: usize,
}

impl ConfidenceStats {
    fn add(&mut self, score: f64) {
        self.sum += score;
        self.count += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageWarning {
    pub phase: Phase,
    pub item_id: String,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub language: String,
    pub samples_annotated: usize,
    pub issues_annotated: usize,
    pub correctness: CorrectnessCounts,
    pub validation: ValidationCounts,
    pub reflection: ReflectionCounts,
    /// Reflection answers split by the annotator's own category labels.
    pub reflection_by_label: BTreeMap<String, ReflectionCounts>,
    /// Phase 2 confidence over all annotations and by Q1 answer.
    pub confidence: ConfidenceStats,
    pub confidence_on_yes: ConfidenceStats,
    pub confidence_on_no: ConfidenceStats,
    pub phase1_confidence: ConfidenceStats,
    pub coverage_warnings: Vec<CoverageWarning>,
}

fn label_name(label: ErrorLabel) -> &'static str {
    match label {
        ErrorLabel::SourceMisinterpretation => "SOURCE_MISINTERPRETATION",
        ErrorLabel::InternalContradiction => "INTERNAL_CONTRADICTION",
        ErrorLabel::NoIssue => "NO_ISSUE",
        ErrorLabel::OtherUnsure => "OTHER_UNSURE",
    }
}

/// Table-style statistics per language pair.
///
/// Items are counted only when exactly three annotators labelled them;
/// items with some other non-zero number of records are reported as
/// coverage warnings. Unannotated items are ignored.
pub fn summarize_validation(
    records: &[AnnotationRecord],
    issues: &[Issue],
    samples: &[Sample],
) -> Result<Vec<ValidationSummary>, StatsError> {
    let language_of_sample: HashMap<&str, String> = samples.iter().map(|s| (s.id.as_str(), s.pair.key())).collect();
    let mut language_of_issue: HashMap<String, String> = HashMap::new();
    for issue in issues {
        if let Some(lang) = language_of_sample.get(issue.sample_id.as_str()) {
            language_of_issue.insert(issue.id(), lang.clone());
        }
    }

    let mut phase1: BTreeMap<&str, Vec<&Phase1Record>> = BTreeMap::new();
    let mut phase2: BTreeMap<&str, Vec<&Phase2Record>> = BTreeMap::new();
    for record in records {
        match record {
            AnnotationRecord::Phase1(r) => {
                if !language_of_sample.contains_key(r.sample_id.as_str()) {
                    return Err(StatsError::UnknownItem {
                        phase: "phase 1",
                        item: r.sample_id.clone(),
                    });
                }
                phase1.entry(&r.sample_id).or_default().push(r);
            }
            AnnotationRecord::Phase2(r) => {
                if !language_of_issue.contains_key(&r.issue_id) {
                    return Err(StatsError::UnknownItem {
                        phase: "phase 2",
                        item: r.issue_id.clone(),
                    });
                }
                phase2.entry(&r.issue_id).or_default().push(r);
            }
        }
    }

    let mut out: BTreeMap<String, ValidationSummary> = BTreeMap::new();
    fn summary_for<'a>(out: &'a mut BTreeMap<String, ValidationSummary>, lang: &str) -> &'a mut ValidationSummary {
        out.entry(lang.to_string()).or_insert_with(|| ValidationSummary {
            language: lang.to_string(),
            ..Default::default()
        })
    }

    for (item, recs) in phase1 {
        let summary = summary_for(&mut out, &language_of_sample[item]);
        if recs.len() != ANNOTATORS_PER_ITEM {
            summary.coverage_warnings.push(CoverageWarning {
                phase: Phase::One,
                item_id: item.to_string(),
                records: recs.len(),
            });
            continue;
        }
        summary.samples_annotated += 1;
        let labels: Vec<Correctness> = recs.iter().map(|r| r.verdict.into()).collect();
        match majority(&labels)? {
            Majority::Label(Correctness::Yes) => summary.correctness.yes += 1,
            Majority::Label(Correctness::No) => summary.correctness.no += 1,
            Majority::Label(Correctness::Unsure) => summary.correctness.unsure += 1,
            Majority::Tie => summary.correctness.tie += 1,
        }
        for r in recs {
            summary.phase1_confidence.add(r.confidence.score());
        }
    }

    for (item, recs) in phase2 {
        let summary = summary_for(&mut out, &language_of_issue[item]);
        if recs.len() != ANNOTATORS_PER_ITEM {
            summary.coverage_warnings.push(CoverageWarning {
                phase: Phase::Two,
                item_id: item.to_string(),
                records: recs.len(),
            });
            continue;
        }
        summary.issues_annotated += 1;
        let labels: Vec<IsError> = recs.iter().map(|r| r.is_error).collect();
        match majority(&labels)? {
            Majority::Label(IsError::Yes) => summary.validation.yes += 1,
            Majority::Label(IsError::Borderline) => summary.validation.borderline += 1,
            Majority::Label(IsError::No) => summary.validation.no += 1,
            Majority::Tie => summary.validation.tie += 1,
        }
        for r in recs {
            let score = r.confidence.score();
            summary.confidence.add(score);
            match r.is_error {
                IsError::Yes => summary.confidence_on_yes.add(score),
                IsError::No => summary.confidence_on_no.add(score),
                IsError::Borderline => {}
            }
            if let (IsError::Yes | IsError::Borderline, Some(reflected)) = (r.is_error, r.reflected) {
                summary.reflection.add(reflected);
                for label in &r.categories {
                    summary
                        .reflection_by_label
                        .entry(label_name(*label).to_string())
                        .or_default()
                        .add(reflected);
                }
            }
        }
    }
    Ok(out.into_values().collect())
}

fn count_cell(n: usize, total: usize) -> String {
    if total == 0 {
        return format!("{n}/0");
    }
    format!("{n}/{total} ({})", format_percent(n as f64 / total as f64))
}

fn share_cell(n: usize, total: usize) -> String {
    if total == 0 {
        return "-".to_string();
    }
    format_percent(n as f64 / total as f64)
}

fn mean_cell(stats: &ConfidenceStats) -> String {
    stats.mean().map_or("-".to_string(), format_percent)
}

/// Row-per-statistic text table, one column per language.
pub fn render_validation(summaries: &[ValidationSummary]) -> String {
    type Cell = fn(&ValidationSummary) -> String;
    let rows: Vec<(&str, Cell)> = vec![
        ("samples annotated", |s| s.samples_annotated.to_string()),
        ("issues annotated", |s| s.issues_annotated.to_string()),
        ("correctness YES", |s| {
            count_cell(s.correctness.yes, s.correctness.total())
        }),
        ("correctness NO", |s| {
            count_cell(s.correctness.no, s.correctness.total())
        }),
        ("correctness UNSURE", |s| {
            count_cell(s.correctness.unsure, s.correctness.total())
        }),
        ("correctness TIE", |s| {
            count_cell(s.correctness.tie, s.correctness.total())
        }),
        ("error YES only", |s| {
            count_cell(s.validation.yes_only(), s.validation.total())
        }),
        ("error YES+BORDERLINE", |s| {
            count_cell(s.validation.yes_or_borderline(), s.validation.total())
        }),
        ("error NO", |s| count_cell(s.validation.no, s.validation.total())),
        ("error TIE", |s| count_cell(s.validation.tie, s.validation.total())),
        ("reflected YES", |s| share_cell(s.reflection.yes, s.reflection.total())),
        ("reflected NO", |s| share_cell(s.reflection.no, s.reflection.total())),
        ("reflected UNSURE", |s| {
            share_cell(s.reflection.not_applicable, s.reflection.total())
        }),
        ("mean confidence", |s| mean_cell(&s.confidence)),
        ("confidence on YES", |s| mean_cell(&s.confidence_on_yes)),
        ("confidence on NO", |s| mean_cell(&s.confidence_on_no)),
    ];
    let header: Vec<String> = std::iter::once("statistic".to_string())
        .chain(summaries.iter().map(|s| s.language.clone()))
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, cell)| {
            std::iter::once(name.to_string())
                .chain(summaries.iter().map(cell))
                .collect()
        })
        .collect();
    crate::evaluate::report::render_table(&header, &body)
}
