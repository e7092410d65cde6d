//! LLM-as-a-judge detection: audit prompt, structured-output parsing and
//! majority-vote aggregation over sampled judgments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, DEFAULT_MAX_TOKENS, JUDGE_TEMPERATURE};
use crate::corpus::{tokenize_trace, Sample, TokenizedTrace};
use crate::locate::normalize;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid judge config: {0}")]
    Config(String),
    #[error("cannot summarize an empty sample set")]
    NoSamples,
    #[error("issue refers to unknown sample {0:?}")]
    UnknownSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCategory {
    /// Trace claims not supported by the source.
    InputTrace,
    /// Trace decisions not reflected in the output.
    TraceOutput,
    /// Contradictions or incoherence within the trace.
    TraceInternal,
}

impl IssueCategory {
    pub const ALL: [IssueCategory; 3] = [Self::InputTrace, Self::TraceOutput, Self::TraceInternal];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InputTrace => "INPUT_TRACE",
            Self::TraceOutput => "TRACE_OUTPUT",
            Self::TraceInternal => "TRACE_INTERNAL",
        }
    }
}

impl fmt::Display for IssueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    /// The mistaken decision persists to the end of the trace.
    #[default]
    Error,
    /// The trace corrects the mistake later on.
    FixedLater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawIssue {
    pub category: IssueCategory,
    pub trace_sentence_idx: usize,
    pub trace_quote: String,
    #[serde(default)]
    pub source_quote: Option<String>,
    #[serde(default)]
    pub output_quote: Option<String>,
    pub rationale: String,
    #[serde(default)]
    pub severity: Severity,
    /// The quote was found in the trace neither exactly nor after
    /// normalization.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub quote_unverified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawJudgment {
    pub has_issues: bool,
    pub summary: String,
    pub issues: Vec<RawIssue>,
    pub run_index: usize,
}

impl RawJudgment {
    pub fn empty(run_index: usize) -> Self {
        Self {
            has_issues: false,
            summary: String::new(),
            issues: Vec::new(),
            run_index,
        }
    }
}

/// A majority-surviving issue for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub sample_id: String,
    pub category: IssueCategory,
    pub trace_sentence_idx: usize,
    pub trace_quote: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_quote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_quote: Option<String>,
    pub rationale: String,
    pub severity: Severity,
    pub votes: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub quote_unverified: bool,
}

impl Issue {
    /// Stable id: unique because issues are grouped per (category, index).
    pub fn id(&self) -> String {
        format!("{}:{}:{}", self.sample_id, self.category, self.trace_sentence_idx)
    }

    /// Only ERROR-severity issues are targeted by interventions.
    pub fn is_targeted(&self) -> bool {
        self.severity == Severity::Error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub k: usize,
    pub temperature: f32,
    pub majority: usize,
    pub max_retries: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            k: 5,
            temperature: JUDGE_TEMPERATURE,
            majority: 3,
            max_retries: 2,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.k == 0 || self.majority == 0 || self.majority > self.k {
            return Err(JudgeError::Config(format!(
                "majority must satisfy 1 <= majority <= k (k={}, majority={})",
                self.k, self.majority
            )));
        }
        // Also rejects NaN.
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(JudgeError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

const JUDGE_TEMPLATE_HEAD: &str = r#"You are a bilingual auditor for machine-translation reasoning traces.

You will analyze a SOURCE sentence, the model's TRACE (reasoning while translating), and the OUTPUT (final translation).

Your task is to detect reasoning errors in three categories:
1. INPUT_TRACE: Trace statements not supported by SOURCE, or proposing incorrect translation semantics (e.g., hallucinated facts, wrong word meanings)
2. TRACE_OUTPUT: Trace decisions that don't match the OUTPUT (e.g., trace says "X" but output has "Y")
3. TRACE_INTERNAL: Contradictions, circular reasoning, or incoherent statements within the trace itself

IMPORTANT RULES:
- The trace will be sentence-tokenized. Reference issues by sentence index (0-indexed).
- All quotes must be EXACT substrings (copy-paste) from the provided text.
- Be strict but fair - minor rephrasing or stylistic choices are not errors.

Output ONLY valid JSON matching this schema:
{
  "has_issues": bool,
  "summary": str,  // One sentence summary of trace quality
  "issues": [
    {
      "category": "INPUT_TRACE" | "TRACE_OUTPUT" | "TRACE_INTERNAL",
      "trace_sentence_idx": int,
      "trace_quote": str,  // Exact substring from trace
      "source_quote": str | null,  // Relevant source quote if applicable
      "output_quote": str | null,  // Relevant output quote if applicable
      "rationale": str,  // 1-2 sentence explanation
      "severity": "ERROR" | "FIXED_LATER"  // Optional. FIXED_LATER if the trace corrects this step later; default ERROR
    }
  ]
}
"#;

/// Renders the audit prompt for one triplet.
pub fn build_judge_prompt(source: &str, tok: &TokenizedTrace, output: &str) -> String {
    let indexed: Vec<String> = tok
        .sentences
        .iter()
        .map(|s| format!("[{}] {}", s.index, s.text))
        .collect();
    format!(
        "{JUDGE_TEMPLATE_HEAD}\nSOURCE:\n{source}\n\nTRACE (sentence-indexed):\n{}\n\nOUTPUT:\n{output}",
        indexed.join("\n")
    )
}

pub fn build_sample_judge_prompt(sample: &Sample, tok: &TokenizedTrace) -> String {
    build_judge_prompt(&sample.source, tok, &sample.output)
}

#[derive(Deserialize)]
struct WireJudgment {
    has_issues: bool,
    summary: String,
    issues: Vec<WireIssue>,
}

#[derive(Deserialize)]
struct WireIssue {
    category: IssueCategory,
    trace_sentence_idx: usize,
    trace_quote: String,
    #[serde(default)]
    source_quote: Option<String>,
    #[serde(default)]
    output_quote: Option<String>,
    rationale: String,
    #[serde(default)]
    severity: Option<Severity>,
}

/// Finds the JSON object in a completion that may carry prose or fences.
fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    if let Some(open) = trimmed.find("```") {
        let after = &trimmed[open + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let body = &after[body_start..];
        let body = body.find("```").map_or(body, |close| &body[..close]);
        if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(body.trim()) {
            return Some(v);
        }
    }
    trimmed.match_indices('{').find_map(|(pos, _)| {
        let mut stream = serde_json::Deserializer::from_str(&trimmed[pos..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

/// Parses and validates one judge completion against the schema.
pub fn parse_judgment(raw: &str, trace: &str, run_index: usize) -> Result<RawJudgment, JudgeError> {
    let value = extract_json(raw).ok_or_else(|| JudgeError::Schema("no JSON object found".to_string()))?;
    let wire: WireJudgment = serde_json::from_value(value).map_err(|e| JudgeError::Schema(e.to_string()))?;
    if !wire.has_issues && !wire.issues.is_empty() {
        return Err(JudgeError::Schema(
            "has_issues is false but issues were listed".to_string(),
        ));
    }
    let normalized_trace = normalize(trace);
    let issues = wire
        .issues
        .into_iter()
        .map(|w| {
            let quote_found = w.trace_quote.is_empty()
                || trace.contains(&w.trace_quote)
                || normalized_trace.contains(&normalize(&w.trace_quote));
            RawIssue {
                category: w.category,
                trace_sentence_idx: w.trace_sentence_idx,
                trace_quote: w.trace_quote,
                source_quote: non_empty(w.source_quote),
                output_quote: non_empty(w.output_quote),
                rationale: w.rationale,
                severity: w.severity.unwrap_or_default(),
                quote_unverified: !quote_found,
            }
        })
        .collect();
    Ok(RawJudgment {
        has_issues: wire.has_issues,
        summary: wire.summary,
        issues,
        run_index,
    })
}

/// Majority vote over sampled judgments.
///
/// Issues are grouped by (category, sentence index); a run supports a group
/// at most once. Groups with at least `majority` supporting runs become one
/// [`Issue`] whose quotes and rationale come from the lowest-indexed
/// supporting run. Severity is FIXED_LATER only when a strict majority of
/// supporting runs says so. The result is independent of the order of
/// `runs`.
pub fn aggregate_votes(sample_id: &str, runs: &[RawJudgment], majority: usize) -> Vec<Issue> {
    struct Group<'a> {
        runs: HashSet<usize>,
        representative: (usize, &'a RawIssue),
        fixed_later: usize,
    }
    let mut groups: BTreeMap<(usize, IssueCategory), Group> = BTreeMap::new();
    for run in runs {
        let mut seen_in_run = HashSet::new();
        for issue in &run.issues {
            let key = (issue.trace_sentence_idx, issue.category);
            if !seen_in_run.insert(key) {
                continue;
            }
            let group = groups.entry(key).or_insert_with(|| Group {
                runs: HashSet::new(),
                representative: (run.run_index, issue),
                fixed_later: 0,
            });
            if !group.runs.insert(run.run_index) {
                continue;
            }
            if issue.severity == Severity::FixedLater {
                group.fixed_later += 1;
            }
            if run.run_index < group.representative.0 {
                group.representative = (run.run_index, issue);
            }
        }
    }
    groups
        .into_values()
        .filter(|g| g.runs.len() >= majority)
        .map(|g| {
            let rep = g.representative.1;
            let votes = g.runs.len();
            Issue {
                sample_id: sample_id.to_string(),
                category: rep.category,
                trace_sentence_idx: rep.trace_sentence_idx,
                trace_quote: rep.trace_quote.clone(),
                source_quote: rep.source_quote.clone(),
                output_quote: rep.output_quote.clone(),
                rationale: rep.rationale.clone(),
                severity: if 2 * g.fixed_later > votes {
                    Severity::FixedLater
                } else {
                    Severity::Error
                },
                votes,
                quote_unverified: rep.quote_unverified,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub sample_id: String,
    pub issues: Vec<Issue>,
    pub runs: Vec<RawJudgment>,
    /// Runs that never produced schema-valid output; they vote empty.
    pub failed_runs: usize,
}

fn judge_run(
    backend: &dyn ChatBackend,
    prompt: &str,
    trace: &str,
    cfg: &JudgeConfig,
    run_index: usize,
) -> Result<Option<RawJudgment>, BackendError> {
    for attempt in 0..=cfg.max_retries {
        let mut request = ChatRequest::new("", prompt);
        request.temperature = cfg.temperature;
        request.max_tokens = cfg.max_tokens;
        request.seed = Some((run_index + attempt * cfg.k) as u64);
        let response = backend.complete(&request)?;
        match parse_judgment(&response.text, trace, run_index) {
            Ok(judgment) => return Ok(Some(judgment)),
            Err(e) => log::warn!("{}: judge run {run_index} attempt {attempt}: {e}", response.request_id),
        }
    }
    Ok(None)
}

/// Runs `cfg.k` sampled judgments for `sample` and aggregates them.
///
/// A trace with no sentences yields no issues and no backend calls.
pub fn detect(sample: &Sample, cfg: &JudgeConfig, backend: &dyn ChatBackend) -> Result<Detection, JudgeError> {
    cfg.validate()?;
    let tok = tokenize_trace(&sample.trace);
    if tok.is_empty() {
        return Ok(Detection {
            sample_id: sample.id.clone(),
            issues: Vec::new(),
            runs: Vec::new(),
            failed_runs: 0,
        });
    }
    let prompt = build_sample_judge_prompt(sample, &tok);
    let outcomes: Vec<Result<Option<RawJudgment>, BackendError>> = (0..cfg.k)
        .into_par_iter()
        .map(|r| judge_run(backend, &prompt, &sample.trace, cfg, r))
        .collect();
    let mut runs = Vec::with_capacity(cfg.k);
    let mut failed_runs = 0;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Some(judgment) => runs.push(judgment),
            None => {
                failed_runs += 1;
                runs.push(RawJudgment::empty(r));
            }
        }
    }
    Ok(Detection {
        sample_id: sample.id.clone(),
        issues: aggregate_votes(&sample.id, &runs, cfg.majority),
        runs,
        failed_runs,
    })
}

/// One greedy judgment, no retries on schema failure.
pub fn judge_once(
    source: &str,
    trace: &str,
    output: &str,
    backend: &dyn ChatBackend,
) -> Result<RawJudgment, JudgeError> {
    let tok = tokenize_trace(trace);
    let request = ChatRequest::new("", build_judge_prompt(source, &tok, output));
    let response = backend.complete(&request)?;
    parse_judgment(&response.text, trace, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n: usize,
    pub n_with_errors: usize,
    pub total_errors: usize,
    pub error_rate: f64,
    pub avg_steps: f64,
    pub avg_errors_per_sample: f64,
}

/// Per-corpus detection statistics over ERROR-severity issues.
pub fn summarize_detection(issues: &[Issue], samples: &[Sample]) -> Result<DetectionSummary, JudgeError> {
    if samples.is_empty() {
        return Err(JudgeError::NoSamples);
    }
    let ids: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let mut errorful = HashSet::new();
    let mut total_errors = 0;
    for issue in issues {
        if !ids.contains(issue.sample_id.as_str()) {
            return Err(JudgeError::UnknownSample(issue.sample_id.clone()));
        }
        if issue.severity == Severity::Error {
            total_errors += 1;
            errorful.insert(issue.sample_id.as_str());
        }
    }
    let n = samples.len();
    let steps: usize = samples.iter().map(|s| tokenize_trace(&s.trace).len()).sum();
    Ok(DetectionSummary {
        n,
        n_with_errors: errorful.len(),
        total_errors,
        error_rate: errorful.len() as f64 / n as f64,
        avg_steps: steps as f64 / n as f64,
        avg_errors_per_sample: total_errors as f64 / n as f64,
    })
}
