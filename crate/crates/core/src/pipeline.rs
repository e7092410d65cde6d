//! Stage runners shared by the command line: detect, intervene, replay,
//! score, aggregate and report.
//!
//! Backend-bound stages fan out over a bounded rayon pool and append each
//! finished item to a progress log keyed by a content hash of its inputs, so
//! an interrupted stage resumes without recomputing finished items.
//! Outputs are written in input order and carry no timestamps.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    assemble_replay_prompt, extract_hindsight_trace, generate, hindsight_synthesis_prompt, BackendError, ChatBackend,
    Decoding,
};
use crate::corpus::Sample;
use crate::evaluate::{
    chrf_default, judge_resolution, score_with_external, DeltaRecord, ScorerCommand, ScoringPair, VerdictRecord,
};
use crate::intervene::{plan_sample, InterventionKind, ReplayMode, ReplaySpec, SkippedIssue};
use crate::judge::{detect, Issue, JudgeConfig, JudgeError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error("{stage}: backend failure on every item ({failed} items): {first}")]
    Backend {
        stage: &'static str,
        failed: usize,
        first: String,
    },
    #[error("{stage}: {} of {total} items failed: {}", .failed.len(), failed_ids(.failed))]
    Partial {
        stage: &'static str,
        total: usize,
        failed: Vec<ItemFailure>,
    },
}

fn failed_ids(failed: &[ItemFailure]) -> String {
    failed.iter().map(|f| f.item.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: String,
    pub error: String,
}

fn io_error(context: impl Into<String>) -> impl FnOnce(io::Error) -> StageError {
    let context = context.into();
    move |source| StageError::Io { context, source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn content_key<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("key material serializes"))
}

pub fn file_sha256(path: &Path) -> Result<String, StageError> {
    let bytes = fs::read(path).map_err(io_error(format!("read {}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a JSONL file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let file = File::open(path).map_err(io_error(format!("open {}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(format!("read {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StageError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StageError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_error(format!("create {}", parent.display())))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_error(format!("write {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_error(format!("rename to {}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StageError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

#[derive(Debug, Serialize, Deserialize)]
struct ProgressLine<V> {
    key: String,
    item: String,
    value: V,
}

/// Append-only log of finished items keyed by input hash.
pub struct ProgressLog<V> {
    path: PathBuf,
    done: HashMap<String, V>,
    file: Mutex<File>,
}

impl<V: Serialize + DeserializeOwned + Clone> ProgressLog<V> {
    /// Loads existing entries. A torn final line is ignored. With
    /// `resume == false` the log is truncated.
    pub fn open(path: &Path, resume: bool) -> Result<Self, StageError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_error(format!("create {}", parent.display())))?;
        }
        let mut done = HashMap::new();
        if resume && path.exists() {
            let text = fs::read_to_string(path).map_err(io_error(format!("read {}", path.display())))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<ProgressLine<V>>(line) {
                    Ok(entry) => {
                        done.insert(entry.key, entry.value);
                    }
                    Err(e) => log::warn!("{}: skipping unreadable progress line: {e}", path.display()),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(path)
            .map_err(io_error(format!("open {}", path.display())))?;
        let torn_tail = resume
            && fs::read(path)
                .map_err(io_error(format!("read {}", path.display())))?
                .last()
                .is_some_and(|&b| b != b'\n');
        if torn_tail {
            file.write_all(b"\n")
                .map_err(io_error(format!("append {}", path.display())))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            done,
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, key: &str) -> Option<&V> {
        self.done.get(key)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn record(&self, key: &str, item: &str, value: &V) -> Result<(), StageError> {
        let line = ProgressLine {
            key: key.to_string(),
            item: item.to_string(),
            value: value.clone(),
        };
        let mut buf = serde_json::to_vec(&line).expect("progress line serializes");
        buf.push(b'\n');
        let mut file = self.file.lock().expect("progress log poisoned");
        file.write_all(&buf)
            .and_then(|()| file.flush())
            .map_err(io_error(format!("append {}", self.path.display())))
    }
}

/// Worker pool and resume policy for one invocation.
pub struct StageContext {
    pool: rayon::ThreadPool,
    pub resume: bool,
}

impl StageContext {
    pub fn new(max_concurrency: usize, resume: bool) -> Result<Self, StageError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_concurrency.max(1))
            .build()
            .map_err(|e| StageError::Input(format!("cannot build worker pool: {e}")))?;
        Ok(Self { pool, resume })
    }
}

enum ItemError {
    Backend(String),
    Other(String),
}

impl From<BackendError> for ItemError {
    fn from(e: BackendError) -> Self {
        Self::Backend(e.to_string())
    }
}

impl From<JudgeError> for ItemError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Backend(b) => Self::Backend(b.to_string()),
            other => Self::Other(other.to_string()),
        }
    }
}

/// Runs `work` for every item not already in the progress log, recording
/// each success immediately. Results come back in input order.
fn run_items<I, V>(
    ctx: &StageContext,
    stage: &'static str,
    progress: &ProgressLog<V>,
    items: &[I],
    id_of: impl Fn(&I) -> String + Sync,
    key_of: impl Fn(&I) -> String + Sync,
    work: impl Fn(&I) -> Result<V, ItemError> + Sync,
) -> Result<Vec<V>, StageError>
where
    I: Sync,
    V: Serialize + DeserializeOwned + Clone + Send + Sync,
{
    let outcomes: Vec<Result<V, (String, ItemError)>> = ctx.pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let key = key_of(item);
                if let Some(v) = progress.get(&key) {
                    return Ok(v.clone());
                }
                let id = id_of(item);
                match work(item) {
                    Ok(v) => {
                        progress
                            .record(&key, &id, &v)
                            .map_err(|e| (id.clone(), ItemError::Other(e.to_string())))?;
                        Ok(v)
                    }
                    Err(e) => Err((id, e)),
                }
            })
            .collect()
    });
    let total = items.len();
    let mut values = Vec::with_capacity(total);
    let mut failed = Vec::new();
    let mut backend_failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(v) => values.push(v),
            Err((item, e)) => {
                let error = match e {
                    ItemError::Backend(m) => {
                        backend_failures += 1;
                        m
                    }
                    ItemError::Other(m) => m,
                };
                log::error!("{stage}: {item}: {error}");
                failed.push(ItemFailure { item, error });
            }
        }
    }
    if failed.is_empty() {
        return Ok(values);
    }
    if backend_failures == total {
        return Err(StageError::Backend {
            stage,
            failed: total,
            first: failed[0].error.clone(),
        });
    }
    Err(StageError::Partial { stage, total, failed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectOutcome {
    issues: Vec<Issue>,
    failed_runs: usize,
}

/// Sampled judging of every sample. Issues come back in corpus order.
pub fn run_detect(
    ctx: &StageContext,
    samples: &[Sample],
    cfg: &JudgeConfig,
    judge: &dyn ChatBackend,
    progress_path: &Path,
) -> Result<Vec<Issue>, StageError> {
    cfg.validate().map_err(|e| StageError::Input(e.to_string()))?;
    let progress = ProgressLog::<DetectOutcome>::open(progress_path, ctx.resume)?;
    let model = judge.model().to_string();
    let outcomes = run_items(
        ctx,
        "detect",
        &progress,
        samples,
        |s| s.id.clone(),
        |s| content_key(&("detect", s, cfg, &model)),
        |s| {
            let detection = detect(s, cfg, judge)?;
            if detection.failed_runs > 0 {
                log::warn!(
                    "{}: {} judge runs failed schema validation",
                    s.id,
                    detection.failed_runs
                );
            }
            Ok(DetectOutcome {
                issues: detection.issues,
                failed_runs: detection.failed_runs,
            })
        },
    )?;
    Ok(outcomes.into_iter().flat_map(|o| o.issues).collect())
}

/// Builds replay specs for every sample. Issues must refer to known samples.
pub fn run_intervene(
    samples: &[Sample],
    issues: &[Issue],
    kinds: &[InterventionKind],
) -> Result<(Vec<ReplaySpec>, Vec<SkippedIssue>), StageError> {
    let known: HashMap<&str, ()> = samples.iter().map(|s| (s.id.as_str(), ())).collect();
    if let Some(orphan) = issues.iter().find(|i| !known.contains_key(i.sample_id.as_str())) {
        return Err(StageError::Input(format!(
            "issue {} refers to unknown sample {:?}",
            orphan.id(),
            orphan.sample_id
        )));
    }
    let mut by_sample: HashMap<&str, Vec<Issue>> = HashMap::new();
    for issue in issues {
        by_sample
            .entry(issue.sample_id.as_str())
            .or_default()
            .push(issue.clone());
    }
    let mut specs = Vec::new();
    let mut skipped = Vec::new();
    for sample in samples {
        let Some(sample_issues) = by_sample.get(sample.id.as_str()) else {
            continue;
        };
        let plan = plan_sample(sample, sample_issues, kinds).map_err(|e| StageError::Input(e.to_string()))?;
        specs.extend(plan.specs);
        skipped.extend(plan.skipped);
    }
    Ok((specs, skipped))
}

/// Outcome of replaying one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub spec_id: String,
    pub sample_id: String,
    pub model_tag: String,
    pub pair: String,
    pub kind: InterventionKind,
    pub target_issue_ids: Vec<String>,
    /// Trace the fix-judge sees: the edited trace, the synthesized hindsight
    /// trace, or the re-reasoning prefix joined with the continued reasoning.
    pub new_trace: String,
    pub output: String,
    #[serde(default)]
    pub emulated_continuation: bool,
}

fn replay_one(spec: &ReplaySpec, sample: &Sample, backend: &dyn ChatBackend) -> Result<ReplayRecord, ItemError> {
    let mut spec = spec.clone();
    if spec.mode == ReplayMode::HindsightSynthesisThenReplay {
        let step1 = hindsight_synthesis_prompt(sample).map_err(|e| ItemError::Other(e.to_string()))?;
        let synthesized = generate(backend, &step1, Decoding::greedy())?;
        spec.edited_trace = extract_hindsight_trace(&synthesized);
        spec.extra_notes.clear();
    }
    let prompt = assemble_replay_prompt(&spec, sample).map_err(|e| ItemError::Other(e.to_string()))?;
    let result = generate(backend, &prompt, Decoding::greedy())?;
    let new_trace = match (spec.mode, result.reasoning.as_deref()) {
        (ReplayMode::RereasonContinuation, Some(r)) if !r.trim().is_empty() => {
            if spec.edited_trace.is_empty() {
                r.to_string()
            } else {
                format!("{}{}", spec.edited_trace, r)
            }
        }
        _ => spec.edited_trace.clone(),
    };
    Ok(ReplayRecord {
        spec_id: spec.id(),
        sample_id: sample.id.clone(),
        model_tag: sample.model_tag.clone(),
        pair: sample.pair.key(),
        kind: spec.kind,
        target_issue_ids: spec.target_issue_ids.clone(),
        new_trace,
        output: result.text,
        emulated_continuation: result.emulated_continuation,
    })
}

fn sample_map(samples: &[Sample]) -> HashMap<&str, &Sample> {
    samples.iter().map(|s| (s.id.as_str(), s)).collect()
}

/// Greedy replay of every spec through the translation backend.
pub fn run_replay(
    ctx: &StageContext,
    samples: &[Sample],
    specs: &[ReplaySpec],
    translator: &dyn ChatBackend,
    progress_path: &Path,
) -> Result<Vec<ReplayRecord>, StageError> {
    let by_id = sample_map(samples);
    if let Some(spec) = specs.iter().find(|s| !by_id.contains_key(s.sample_id.as_str())) {
        return Err(StageError::Input(format!(
            "spec {} refers to unknown sample {:?}",
            spec.id(),
            spec.sample_id
        )));
    }
    let progress = ProgressLog::<ReplayRecord>::open(progress_path, ctx.resume)?;
    let model = translator.model().to_string();
    run_items(
        ctx,
        "replay",
        &progress,
        specs,
        ReplaySpec::id,
        |spec| content_key(&("replay", spec, by_id[spec.sample_id.as_str()], &model)),
        |spec| replay_one(spec, by_id[spec.sample_id.as_str()], translator),
    )
}

/// Built-in chrF or an external scorer process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Metric {
    Chrf,
    External(ScorerCommand),
}

impl Metric {
    pub fn name(&self) -> &str {
        match self {
            Self::Chrf => "chrf",
            Self::External(c) => &c.name,
        }
    }

    /// `chrf` or `external:<program> [args...]`.
    pub fn parse(descriptor: &str) -> Result<Self, StageError> {
        match descriptor.trim() {
            "chrf" => Ok(Self::Chrf),
            other => match other.strip_prefix("external:") {
                Some(cmd) => ScorerCommand::parse("external", cmd)
                    .map(Self::External)
                    .map_err(|e| StageError::Input(e.to_string())),
                None => Err(StageError::Input(format!(
                    "unknown metric {other:?}; expected chrf or external:<command>"
                ))),
            },
        }
    }

    pub fn score(&self, pairs: &[ScoringPair]) -> Result<Vec<f64>, StageError> {
        match self {
            Self::Chrf => pairs
                .iter()
                .map(|p| chrf_default(&p.hypothesis, &p.reference).map_err(|e| StageError::Input(e.to_string())))
                .collect(),
            Self::External(cmd) => score_with_external(cmd, pairs).map_err(|e| StageError::Input(e.to_string())),
        }
    }
}

/// Fix-judges every targeted issue of every replay.
pub fn run_fix_judge(
    ctx: &StageContext,
    samples: &[Sample],
    issues: &[Issue],
    replays: &[ReplayRecord],
    judge: &dyn ChatBackend,
    progress_path: &Path,
) -> Result<Vec<VerdictRecord>, StageError> {
    let by_sample = sample_map(samples);
    let by_issue: HashMap<String, &Issue> = issues.iter().map(|i| (i.id(), i)).collect();
    let mut jobs: Vec<(&ReplayRecord, &Issue)> = Vec::new();
    for replay in replays {
        if !by_sample.contains_key(replay.sample_id.as_str()) {
            return Err(StageError::Input(format!(
                "replay {} refers to unknown sample {:?}",
                replay.spec_id, replay.sample_id
            )));
        }
        for issue_id in &replay.target_issue_ids {
            let issue = by_issue.get(issue_id).ok_or_else(|| {
                StageError::Input(format!("replay {} targets unknown issue {issue_id}", replay.spec_id))
            })?;
            jobs.push((replay, issue));
        }
    }
    let progress = ProgressLog::<VerdictRecord>::open(progress_path, ctx.resume)?;
    let model = judge.model().to_string();
    run_items(
        ctx,
        "score",
        &progress,
        &jobs,
        |(r, i)| format!("{}#{}", r.spec_id, i.id()),
        |(r, i)| content_key(&("fix-judge", r, i, &model)),
        |(replay, issue)| {
            let sample = by_sample[replay.sample_id.as_str()];
            let verdict = judge_resolution(sample, issue, replay.kind, &replay.new_trace, &replay.output, judge)?;
            Ok(VerdictRecord {
                spec_id: replay.spec_id.clone(),
                model_tag: replay.model_tag.clone(),
                pair: replay.pair.clone(),
                kind: replay.kind,
                sample_id: replay.sample_id.clone(),
                issue_id: verdict.issue_id,
                resolved: verdict.resolved,
                evidence: verdict.evidence,
            })
        },
    )
}

/// Metric deltas for replays whose sample has a reference. The baseline is
/// the original output scored against the same reference.
pub fn run_metric(
    samples: &[Sample],
    replays: &[ReplayRecord],
    metric: &Metric,
) -> Result<Vec<DeltaRecord>, StageError> {
    let by_sample = sample_map(samples);
    let mut scored: Vec<&ReplayRecord> = Vec::new();
    let mut pairs = Vec::new();
    for replay in replays {
        let sample = by_sample.get(replay.sample_id.as_str()).ok_or_else(|| {
            StageError::Input(format!(
                "replay {} refers to unknown sample {:?}",
                replay.spec_id, replay.sample_id
            ))
        })?;
        let Some(reference) = sample.reference.as_deref().filter(|r| !r.trim().is_empty()) else {
            continue;
        };
        for hypothesis in [&sample.output, &replay.output] {
            pairs.push(ScoringPair {
                source: sample.source.clone(),
                hypothesis: hypothesis.clone(),
                reference: reference.to_string(),
            });
        }
        scored.push(replay);
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let scores = metric.score(&pairs)?;
    Ok(scored
        .iter()
        .zip(scores.chunks(2))
        .map(|(replay, s)| DeltaRecord {
            spec_id: replay.spec_id.clone(),
            model_tag: replay.model_tag.clone(),
            pair: replay.pair.clone(),
            kind: replay.kind,
            sample_id: replay.sample_id.clone(),
            metric: metric.name().to_string(),
            baseline: s[0],
            intervened: s[1],
            delta: s[1] - s[0],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a stage or a full run, minus the backends
/// themselves. Carries no timestamps so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translator_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinds: Vec<InterventionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    pub max_concurrency: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(stage: &str, max_concurrency: usize) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            stage: stage.to_string(),
            judge: None,
            judge_backend: None,
            translator_backend: None,
            kinds: Vec::new(),
            metric: None,
            max_concurrency,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn digest_inputs(paths: &[&Path]) -> Result<Vec<InputDigest>, StageError> {
        paths
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// Sidecar tying an output file to the manifest that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputStamp {
    pub stage: String,
    pub manifest: String,
    pub manifest_sha256: String,
    pub output_sha256: String,
}

pub fn stamp_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write_stamp(output: &Path, stage: &str, manifest_path: &Path) -> Result<(), StageError> {
    let stamp = OutputStamp {
        stage: stage.to_string(),
        manifest: manifest_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        manifest_sha256: file_sha256(manifest_path)?,
        output_sha256: file_sha256(output)?,
    };
    let mut bytes = serde_json::to_vec_pretty(&stamp).expect("stamp serializes");
    bytes.push(b'\n');
    write_atomic(&stamp_path(output), &bytes)
}
