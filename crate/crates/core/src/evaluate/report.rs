//! Roll-ups of verdicts and metric deltas, and their table rendering.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::intervene::InterventionKind;
use crate::judge::{summarize_detection, DetectionSummary, Issue, JudgeError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("delta for spec {spec_id:?} has no matching verdict")]
    OrphanDelta { spec_id: String },
    #[error("spec {spec_id:?} is keyed as {left} in one record and {right} in another")]
    KeyMismatch {
        spec_id: String,
        left: String,
        right: String,
    },
    #[error("deltas mix metrics {0:?} and {1:?}")]
    MixedMetrics(String, String),
    #[error("duplicate delta for spec {0:?}")]
    DuplicateDelta(String),
    #[error(transparent)]
    Detection(#[from] JudgeError),
}

/// One fix-judge outcome, keyed for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub spec_id: String,
    pub model_tag: String,
    pub pair: String,
    pub kind: InterventionKind,
    pub sample_id: String,
    pub issue_id: String,
    pub resolved: bool,
    pub evidence: String,
}

/// Metric change of one replay over the original output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub spec_id: String,
    pub model_tag: String,
    pub pair: String,
    pub kind: InterventionKind,
    pub sample_id: String,
    pub metric: String,
    pub baseline: f64,
    pub intervened: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub model_tag: String,
    pub pair: String,
    pub kind: InterventionKind,
}

impl RowKey {
    fn describe(&self) -> String {
        format!("({}, {}, {})", self.model_tag, self.pair, self.kind)
    }

    fn order(&self) -> (&str, &str, usize) {
        (&self.model_tag, &self.pair, self.kind.report_rank())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model_tag: String,
    pub pair: String,
    pub kind: InterventionKind,
    pub resolved: usize,
    pub total: usize,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    /// Highest rate among this model and pair's rows; unset when they all tie.
    pub best_rate: bool,
    /// Highest mean delta among this model and pair's rows; unset when they all tie.
    pub best_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    /// Rebuilds a report from rows read back from JSONL.
    pub fn from_rows(rows: Vec<AggregateRow>) -> Self {
        let metric = rows.iter().find_map(|r| r.metric.clone());
        Self { metric, rows }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Acc {
    resolved: usize,
    total: usize,
    deltas: Vec<f64>,
}

/// Mergeable counts behind an [`AggregateReport`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    rows: BTreeMap<RowKey, Acc>,
    spec_keys: HashMap<String, RowKey>,
    delta_specs: HashMap<String, RowKey>,
    metric: Option<String>,
}

impl Tally {
    pub fn new() -> Self {
        Self::default()
    }

    fn bind_spec(map: &mut HashMap<String, RowKey>, spec_id: &str, key: &RowKey) -> Result<(), ReportError> {
        match map.get(spec_id) {
            Some(existing) if existing != key => Err(ReportError::KeyMismatch {
                spec_id: spec_id.to_string(),
                left: existing.describe(),
                right: key.describe(),
            }),
            Some(_) => Ok(()),
            None => {
                map.insert(spec_id.to_string(), key.clone());
                Ok(())
            }
        }
    }

    pub fn add_verdict(&mut self, v: &VerdictRecord) -> Result<(), ReportError> {
        let key = RowKey {
            model_tag: v.model_tag.clone(),
            pair: v.pair.clone(),
            kind: v.kind,
        };
        Self::bind_spec(&mut self.spec_keys, &v.spec_id, &key)?;
        let acc = self.rows.entry(key).or_default();
        acc.total += 1;
        acc.resolved += usize::from(v.resolved);
        Ok(())
    }

    fn set_metric(&mut self, metric: &str) -> Result<(), ReportError> {
        match &self.metric {
            Some(m) if m != metric => Err(ReportError::MixedMetrics(m.clone(), metric.to_string())),
            Some(_) => Ok(()),
            None => {
                self.metric = Some(metric.to_string());
                Ok(())
            }
        }
    }

    /// Deltas are checked against verdicts in [`Tally::finish`], so shards
    /// may be added in any order.
    pub fn add_delta(&mut self, d: &DeltaRecord) -> Result<(), ReportError> {
        self.set_metric(&d.metric)?;
        let key = RowKey {
            model_tag: d.model_tag.clone(),
            pair: d.pair.clone(),
            kind: d.kind,
        };
        if self.delta_specs.contains_key(&d.spec_id) {
            return Err(ReportError::DuplicateDelta(d.spec_id.clone()));
        }
        self.delta_specs.insert(d.spec_id.clone(), key.clone());
        self.rows.entry(key).or_default().deltas.push(d.delta);
        Ok(())
    }

    pub fn merge(&mut self, other: Tally) -> Result<(), ReportError> {
        if let Some(m) = &other.metric {
            self.set_metric(m)?;
        }
        for (spec, key) in &other.spec_keys {
            Self::bind_spec(&mut self.spec_keys, spec, key)?;
        }
        for (spec, key) in other.delta_specs {
            if self.delta_specs.contains_key(&spec) {
                return Err(ReportError::DuplicateDelta(spec));
            }
            self.delta_specs.insert(spec, key);
        }
        for (key, acc) in other.rows {
            let mine = self.rows.entry(key).or_default();
            mine.resolved += acc.resolved;
            mine.total += acc.total;
            mine.deltas.extend(acc.deltas);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<AggregateReport, ReportError> {
        let mut delta_specs: Vec<_> = self.delta_specs.iter().collect();
        delta_specs.sort();
        for (spec, key) in delta_specs {
            match self.spec_keys.get(spec) {
                None => return Err(ReportError::OrphanDelta { spec_id: spec.clone() }),
                Some(k) if k != key => {
                    return Err(ReportError::KeyMismatch {
                        spec_id: spec.clone(),
                        left: k.describe(),
                        right: key.describe(),
                    })
                }
                Some(_) => {}
            }
        }

        let mut rows: Vec<(RowKey, AggregateRow)> = self
            .rows
            .into_iter()
            .filter(|(_, acc)| acc.total > 0)
            .map(|(key, mut acc)| {
                // Sorted summation keeps the mean independent of shard order.
                acc.deltas.sort_by(f64::total_cmp);
                let mean_delta =
                    (!acc.deltas.is_empty()).then(|| acc.deltas.iter().sum::<f64>() / acc.deltas.len() as f64);
                let row = AggregateRow {
                    model_tag: key.model_tag.clone(),
                    pair: key.pair.clone(),
                    kind: key.kind,
                    resolved: acc.resolved,
                    total: acc.total,
                    rate: acc.resolved as f64 / acc.total as f64,
                    metric: mean_delta.and(self.metric.clone()),
                    mean_delta,
                    best_rate: false,
                    best_delta: false,
                };
                (key, row)
            })
            .collect();
        rows.sort_by(|a, b| a.0.order().cmp(&b.0.order()));

        // Per group: (min rate, max rate, min delta, max delta). A column
        // where every row ties marks nothing.
        type Span = (f64, f64, Option<(f64, f64)>);
        let mut best: HashMap<(String, String), Span> = HashMap::new();
        for (_, row) in &rows {
            let entry = best.entry((row.model_tag.clone(), row.pair.clone())).or_insert((
                f64::INFINITY,
                f64::NEG_INFINITY,
                None,
            ));
            entry.0 = entry.0.min(row.rate);
            entry.1 = entry.1.max(row.rate);
            if let Some(d) = row.mean_delta {
                entry.2 = Some(entry.2.map_or((d, d), |(lo, hi): (f64, f64)| (lo.min(d), hi.max(d))));
            }
        }
        let rows = rows
            .into_iter()
            .map(|(_, mut row)| {
                let (lo, hi, delta) = best[&(row.model_tag.clone(), row.pair.clone())];
                row.best_rate = lo < hi && row.rate == hi;
                row.best_delta = match (row.mean_delta, delta) {
                    (Some(d), Some((lo, hi))) => lo < hi && d == hi,
                    _ => false,
                };
                row
            })
            .collect();
        Ok(AggregateReport {
            metric: self.metric,
            rows,
        })
    }
}

/// Per-(model, pair, kind) resolution counts and mean deltas. Rows without
/// verdicts are omitted.
pub fn aggregate(verdicts: &[VerdictRecord], deltas: &[DeltaRecord]) -> Result<AggregateReport, ReportError> {
    let mut tally = Tally::new();
    for v in verdicts {
        tally.add_verdict(v)?;
    }
    for d in deltas {
        tally.add_delta(d)?;
    }
    tally.finish()
}

/// `125 / 149` → `83.9%`.
pub fn format_rate(resolved: usize, total: usize) -> String {
    if total == 0 {
        return "0.0%".to_string();
    }
    format_percent(resolved as f64 / total as f64)
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

/// Four decimals with an explicit `+` on positive values; values that round
/// to zero print as `0.0000`.
pub fn format_delta(delta: f64) -> String {
    let text = format!("{delta:.4}");
    if text.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0.0000".to_string()
    } else if delta > 0.0 {
        format!("+{text}")
    } else {
        text
    }
}

pub fn render_table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Aligned text table; `*` marks the best rate and delta per model and pair.
pub fn render_report(report: &AggregateReport) -> String {
    let metric = report.metric.as_deref().unwrap_or("metric");
    let header: Vec<String> = ["model", "pair", "intervention", "resolved/total", "rate"]
        .iter()
        .map(|s| s.to_string())
        .chain([format!("delta {metric}")])
        .collect();
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mark = |best: bool| if best { "*" } else { "" };
            vec![
                r.model_tag.clone(),
                r.pair.clone(),
                r.kind.label().to_string(),
                format!("{} / {}", r.resolved, r.total),
                format!("{}{}", format_percent(r.rate), mark(r.best_rate)),
                match r.mean_delta {
                    Some(d) => format!("{}{}", format_delta(d), mark(r.best_delta)),
                    None => "-".to_string(),
                },
            ]
        })
        .collect();
    render_table(&header, &body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub model_tag: String,
    pub pair: String,
    #[serde(flatten)]
    pub summary: DetectionSummary,
}

/// Detection statistics per (model, pair), in sorted order.
pub fn detection_rows(samples: &[Sample], issues: &[Issue]) -> Result<Vec<DetectionRow>, ReportError> {
    let mut groups: BTreeMap<(String, String), Vec<Sample>> = BTreeMap::new();
    let mut owner: HashMap<&str, (String, String)> = HashMap::new();
    for s in samples {
        let key = (s.model_tag.clone(), s.pair.key());
        owner.insert(&s.id, key.clone());
        groups.entry(key).or_default().push(s.clone());
    }
    let mut grouped_issues: HashMap<(String, String), Vec<Issue>> = HashMap::new();
    for issue in issues {
        let key = owner
            .get(issue.sample_id.as_str())
            .ok_or_else(|| JudgeError::UnknownSample(issue.sample_id.clone()))?;
        grouped_issues.entry(key.clone()).or_default().push(issue.clone());
    }
    groups
        .into_iter()
        .map(|(key, group)| {
            let summary = summarize_detection(grouped_issues.get(&key).map_or(&[][..], Vec::as_slice), &group)?;
            Ok(DetectionRow {
                model_tag: key.0,
                pair: key.1,
                summary,
            })
        })
        .collect()
}

pub fn render_detection(rows: &[DetectionRow]) -> String {
    let header: Vec<String> = [
        "model",
        "pair",
        "n",
        "w/ errors",
        "error rate",
        "avg steps",
        "avg errors",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model_tag.clone(),
                r.pair.clone(),
                r.summary.n.to_string(),
                r.summary.n_with_errors.to_string(),
                format_percent(r.summary.error_rate),
                format!("{:.2}", r.summary.avg_steps),
                format!("{:.2}", r.summary.avg_errors_per_sample),
            ]
        })
        .collect();
    render_table(&header, &body)
}
