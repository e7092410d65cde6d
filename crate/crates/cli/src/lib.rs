//! `traceaudit` command line.
//!
//! Settings come from an optional TOML file (`--config`) and flags; flags
//! win. Exit codes: 0 success, 1 input error, 2 backend error, 3 partial
//! failure.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use traceaudit_core::annotate::{AnnotationRecord, AnnotationService, JournalStore};
use traceaudit_core::backend::{
    BackendError, ChatBackend, HttpBackend, HttpConfig, MockBackend, Recording, RetryPolicy, Retrying,
};
use traceaudit_core::corpus::{load_samples, tokenize_trace, CorpusFormat, Sample};
use traceaudit_core::evaluate::{
    aggregate, detection_rows, render_detection, render_report, AggregateReport, AggregateRow, DeltaRecord,
    VerdictRecord,
};
use traceaudit_core::intervene::{InterventionKind, ReplaySpec};
use traceaudit_core::judge::{Issue, JudgeConfig};
use traceaudit_core::pipeline::{
    read_jsonl, run_detect, run_fix_judge, run_intervene, run_metric, run_replay, write_atomic, write_jsonl,
    write_stamp, Metric, ReplayRecord, RunManifest, StageContext, StageError,
};

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "traceaudit", version, about = "Audit reasoning traces of translation models")]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Upper bound on concurrent backend requests.
    #[arg(long, global = true)]
    pub max_concurrency: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Judge every trace k times and keep majority-voted issues.
    Detect(DetectArgs),
    /// Turn issues into replay specs.
    Intervene(InterveneArgs),
    /// Replay specs through the translation backend.
    Replay(ReplayArgs),
    /// Fix-judge replays and compute metric deltas.
    Score(ScoreArgs),
    /// Roll verdicts and deltas up per model, pair and intervention.
    Aggregate(AggregateArgs),
    /// Render report tables.
    Report(ReportArgs),
    /// Serve the annotation API.
    AnnotateServe(ServeArgs),
    /// Check fixture files for schema and cross-reference errors.
    ValidateFixtures(ValidateArgs),
    /// Run detect through report into one directory.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `triplets` or `parallel`.
    #[arg(long, default_value = "triplets")]
    pub format: CorpusFormat,
}

#[derive(Debug, Args, Default)]
pub struct BackendArgs {
    /// `mock:<script.jsonl>` or an OpenAI-compatible base URL.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long)]
    pub judge_model: Option<String>,
    /// `mock:<script.jsonl>` or an OpenAI-compatible base URL.
    #[arg(long)]
    pub translator: Option<String>,
    #[arg(long)]
    pub translator_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Append every request and completion to this JSONL file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct JudgeArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub majority: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long)]
    pub max_retries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[command(flatten)]
    pub judge: JudgeArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Discard progress from earlier runs.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub issues: PathBuf,
    /// Comma-separated: hedging,removal,rereason,hindsight,oracle-1,oracle-k.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to list issues that could not be located.
    #[arg(long)]
    pub skipped: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub specs: PathBuf,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub issues: PathBuf,
    #[arg(long)]
    pub replays: PathBuf,
    #[command(flatten)]
    pub backends: BackendArgs,
    /// `chrf` or `external:<command>`.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub deltas: PathBuf,
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub deltas: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Aggregate rows written by `aggregate`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// With `--issues`, adds the detection table.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "triplets")]
    pub format: CorpusFormat,
    #[arg(long)]
    pub issues: Option<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub issues: PathBuf,
    /// Comma-separated annotator ids.
    #[arg(long)]
    pub annotators: String,
    #[arg(long, default_value = "annotations.jsonl")]
    pub journal: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub issues: Option<PathBuf>,
    #[arg(long)]
    pub specs: Option<PathBuf>,
    /// Annotation records (JSONL).
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[command(flatten)]
    pub judge: JudgeArgs,
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub fresh: bool,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub judge: Option<String>,
    pub judge_model: Option<String>,
    pub translator: Option<String>,
    pub translator_model: Option<String>,
    pub api_key_env: Option<String>,
    pub transcript: Option<PathBuf>,
    pub max_concurrency: Option<usize>,
    pub kinds: Option<Vec<String>>,
    pub metric: Option<String>,
    pub native_thinking: Option<bool>,
    pub timeout_secs: Option<u64>,
    pub k: Option<usize>,
    pub majority: Option<usize>,
    pub temperature: Option<f32>,
    pub max_retries: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

struct Settings {
    file: FileConfig,
    max_concurrency: usize,
}

impl Settings {
    fn new(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let max_concurrency = cli.max_concurrency.or(file.max_concurrency).unwrap_or(4);
        if max_concurrency == 0 {
            bail!("max_concurrency must be at least 1");
        }
        Ok(Self { file, max_concurrency })
    }

    fn judge_config(&self, args: &JudgeArgs) -> Result<JudgeConfig> {
        let defaults = JudgeConfig::default();
        let cfg = JudgeConfig {
            k: args.k.or(self.file.k).unwrap_or(defaults.k),
            majority: args.majority.or(self.file.majority).unwrap_or(defaults.majority),
            temperature: args
                .temperature
                .or(self.file.temperature)
                .unwrap_or(defaults.temperature),
            max_retries: args
                .max_retries
                .or(self.file.max_retries)
                .unwrap_or(defaults.max_retries),
            ..defaults
        };
        cfg.validate().map_err(|e| anyhow!(e))?;
        Ok(cfg)
    }

    fn kinds(&self, flag: Option<&str>) -> Result<Vec<InterventionKind>> {
        let list = match (flag, &self.file.kinds) {
            (Some(f), _) => f.to_string(),
            (None, Some(k)) => k.join(","),
            (None, None) => return Ok(InterventionKind::ALL.to_vec()),
        };
        let kinds = InterventionKind::parse_list(&list)?;
        if kinds.is_empty() {
            bail!("no intervention kinds selected");
        }
        Ok(kinds)
    }

    fn metric(&self, flag: Option<&str>) -> Result<Metric> {
        let descriptor = flag.or(self.file.metric.as_deref()).unwrap_or("chrf");
        Ok(Metric::parse(descriptor)?)
    }

    fn context(&self, fresh: bool) -> Result<StageContext> {
        Ok(StageContext::new(self.max_concurrency, !fresh)?)
    }

    fn backend(&self, args: &BackendArgs, role: Role) -> Result<(Box<dyn ChatBackend>, String)> {
        let (descriptor, model) = match role {
            Role::Judge => (
                args.judge.as_ref().or(self.file.judge.as_ref()),
                args.judge_model.as_ref().or(self.file.judge_model.as_ref()),
            ),
            Role::Translator => (
                args.translator.as_ref().or(self.file.translator.as_ref()),
                args.translator_model.as_ref().or(self.file.translator_model.as_ref()),
            ),
        };
        let descriptor = descriptor.ok_or_else(|| anyhow!("no {} backend given (--{})", role.name(), role.name()))?;
        let native_thinking = self.file.native_thinking.unwrap_or(false);
        let (backend, label): (Box<dyn ChatBackend>, String) = if let Some(path) = descriptor.strip_prefix("mock:") {
            let model = model.cloned().unwrap_or_else(|| "mock".to_string());
            let mock = MockBackend::load(&model, path)?.with_native_thinking(native_thinking);
            (Box::new(mock), format!("mock:{path} model={model}"))
        } else if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
            let model = model.ok_or_else(|| anyhow!("--{}-model is required for HTTP backends", role.name()))?;
            let config = HttpConfig {
                base_url: descriptor.clone(),
                model: model.clone(),
                api_key_env: args.api_key_env.clone().or(self.file.api_key_env.clone()),
                timeout_secs: self.file.timeout_secs.unwrap_or(300),
                native_thinking,
            };
            let http = Retrying::new(HttpBackend::new(config)?, RetryPolicy::default());
            (Box::new(http), format!("{descriptor} model={model}"))
        } else {
            bail!("unrecognized backend {descriptor:?}; use mock:<path> or an http(s) URL");
        };
        match args.transcript.as_ref().or(self.file.transcript.as_ref()) {
            Some(path) => {
                let recording = Recording::new(backend, path)
                    .with_context(|| format!("cannot open transcript {}", path.display()))?;
                Ok((Box::new(recording), label))
            }
            None => Ok((backend, label)),
        }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Judge,
    Translator,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Self::Judge => "judge",
            Self::Translator => "translator",
        }
    }
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(stage) = cause.downcast_ref::<StageError>() {
            return match stage {
                StageError::Backend { .. } => EXIT_BACKEND,
                StageError::Partial { .. } => EXIT_PARTIAL,
                _ => EXIT_INPUT,
            };
        }
        if let Some(backend) = cause.downcast_ref::<BackendError>() {
            return match backend {
                BackendError::Config(_) => EXIT_INPUT,
                _ => EXIT_BACKEND,
            };
        }
    }
    EXIT_INPUT
}

fn require_input(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} file {} not found; run `{producer}` first", path.display());
    }
    Ok(())
}

fn load_corpus(args: &CorpusArgs) -> Result<Vec<Sample>> {
    load_samples(&args.corpus, args.format).with_context(|| format!("cannot load corpus {}", args.corpus.display()))
}

fn progress_path(out: &Path, stage: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{stage}.progress.jsonl"));
    out.with_file_name(name)
}

/// Writes `<output>.manifest.json` for a single-stage invocation.
fn write_stage_manifest(output: &Path, mut manifest: RunManifest, inputs: &[&Path]) -> Result<()> {
    manifest.inputs = RunManifest::digest_inputs(inputs)?;
    manifest.outputs = vec![output.display().to_string()];
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    write_atomic(&output.with_file_name(name), &manifest.to_json())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::new(&cli)?;
    match &cli.command {
        Command::Detect(args) => detect_cmd(&settings, args),
        Command::Intervene(args) => intervene_cmd(&settings, args),
        Command::Replay(args) => replay_cmd(&settings, args),
        Command::Score(args) => score_cmd(&settings, args),
        Command::Aggregate(args) => aggregate_cmd(&settings, args),
        Command::Report(args) => report_cmd(args),
        Command::AnnotateServe(args) => serve_cmd(args),
        Command::ValidateFixtures(args) => validate_cmd(args),
        Command::Run(args) => run_cmd(&settings, args),
    }
}

fn detect_cmd(settings: &Settings, args: &DetectArgs) -> Result<()> {
    let samples = load_corpus(&args.corpus)?;
    let cfg = settings.judge_config(&args.judge)?;
    let (judge, label) = settings.backend(&args.backends, Role::Judge)?;
    let ctx = settings.context(args.fresh)?;
    let issues = run_detect(
        &ctx,
        &samples,
        &cfg,
        judge.as_ref(),
        &progress_path(&args.out, "detect"),
    )?;
    write_jsonl(&args.out, &issues)?;
    let mut manifest = RunManifest::new("detect", settings.max_concurrency);
    manifest.judge = Some(cfg);
    manifest.judge_backend = Some(label);
    write_stage_manifest(&args.out, manifest, &[&args.corpus.corpus])?;
    log::info!("{} issues over {} samples", issues.len(), samples.len());
    Ok(())
}

fn intervene_cmd(settings: &Settings, args: &InterveneArgs) -> Result<()> {
    require_input(&args.issues, "issues", "detect")?;
    let samples = load_corpus(&args.corpus)?;
    let issues: Vec<Issue> = read_jsonl(&args.issues)?;
    let kinds = settings.kinds(args.kinds.as_deref())?;
    let (specs, skipped) = run_intervene(&samples, &issues, &kinds)?;
    write_jsonl(&args.out, &specs)?;
    if let Some(path) = &args.skipped {
        write_jsonl(path, &skipped)?;
    }
    let mut manifest = RunManifest::new("intervene", settings.max_concurrency);
    manifest.kinds = kinds;
    write_stage_manifest(&args.out, manifest, &[&args.corpus.corpus, &args.issues])?;
    log::info!("{} specs, {} skipped", specs.len(), skipped.len());
    Ok(())
}

fn replay_cmd(settings: &Settings, args: &ReplayArgs) -> Result<()> {
    require_input(&args.specs, "specs", "intervene")?;
    let samples = load_corpus(&args.corpus)?;
    let specs: Vec<ReplaySpec> = read_jsonl(&args.specs)?;
    let (translator, label) = settings.backend(&args.backends, Role::Translator)?;
    let ctx = settings.context(args.fresh)?;
    let replays = run_replay(
        &ctx,
        &samples,
        &specs,
        translator.as_ref(),
        &progress_path(&args.out, "replay"),
    )?;
    write_jsonl(&args.out, &replays)?;
    let mut manifest = RunManifest::new("replay", settings.max_concurrency);
    manifest.translator_backend = Some(label);
    write_stage_manifest(&args.out, manifest, &[&args.corpus.corpus, &args.specs])?;
    Ok(())
}

fn score_cmd(settings: &Settings, args: &ScoreArgs) -> Result<()> {
    require_input(&args.issues, "issues", "detect")?;
    require_input(&args.replays, "replays", "replay")?;
    let samples = load_corpus(&args.corpus)?;
    let issues: Vec<Issue> = read_jsonl(&args.issues)?;
    let replays: Vec<ReplayRecord> = read_jsonl(&args.replays)?;
    let metric = settings.metric(args.metric.as_deref())?;
    let (judge, label) = settings.backend(&args.backends, Role::Judge)?;
    let ctx = settings.context(args.fresh)?;
    let verdicts = run_fix_judge(
        &ctx,
        &samples,
        &issues,
        &replays,
        judge.as_ref(),
        &progress_path(&args.verdicts, "score"),
    )?;
    let deltas = run_metric(&samples, &replays, &metric)?;
    write_jsonl(&args.verdicts, &verdicts)?;
    write_jsonl(&args.deltas, &deltas)?;
    let inputs: [&Path; 3] = [&args.corpus.corpus, &args.issues, &args.replays];
    let mut manifest = RunManifest::new("score", settings.max_concurrency);
    manifest.judge_backend = Some(label);
    manifest.metric = Some(metric.name().to_string());
    write_stage_manifest(&args.verdicts, manifest.clone(), &inputs)?;
    write_stage_manifest(&args.deltas, manifest, &inputs)?;
    Ok(())
}

fn aggregate_cmd(settings: &Settings, args: &AggregateArgs) -> Result<()> {
    require_input(&args.verdicts, "verdicts", "score")?;
    let verdicts: Vec<VerdictRecord> = read_jsonl(&args.verdicts)?;
    let deltas: Vec<DeltaRecord> = match &args.deltas {
        Some(path) => {
            require_input(path, "deltas", "score")?;
            read_jsonl(path)?
        }
        None => Vec::new(),
    };
    let report = aggregate(&verdicts, &deltas)?;
    write_jsonl(&args.out, &report.rows)?;
    let mut inputs: Vec<&Path> = vec![&args.verdicts];
    if let Some(d) = &args.deltas {
        inputs.push(d);
    }
    write_stage_manifest(
        &args.out,
        RunManifest::new("aggregate", settings.max_concurrency),
        &inputs,
    )?;
    Ok(())
}

fn render_full_report(report: Option<&AggregateReport>, detection: Option<(&[Sample], &[Issue])>) -> Result<String> {
    let mut sections = Vec::new();
    if let Some((samples, issues)) = detection {
        sections.push(format!(
            "Detection\n\n{}",
            render_detection(&detection_rows(samples, issues)?)
        ));
    }
    if let Some(report) = report {
        sections.push(format!("Interventions\n\n{}", render_report(report)));
    }
    Ok(sections.join("\n"))
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let report = match &args.report {
        Some(path) => {
            require_input(path, "report", "aggregate")?;
            let rows: Vec<AggregateRow> = read_jsonl(path)?;
            Some(AggregateReport::from_rows(rows))
        }
        None => None,
    };
    let detection = match (&args.corpus, &args.issues) {
        (Some(corpus), Some(issues)) => {
            require_input(issues, "issues", "detect")?;
            Some((load_samples(corpus, args.format)?, read_jsonl::<Issue>(issues)?))
        }
        (None, None) => None,
        _ => bail!("--corpus and --issues go together"),
    };
    if report.is_none() && detection.is_none() {
        bail!("nothing to report; pass --report and/or --corpus with --issues");
    }
    let text = render_full_report(
        report.as_ref(),
        detection.as_ref().map(|(s, i)| (s.as_slice(), i.as_slice())),
    )?;
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn serve_cmd(args: &ServeArgs) -> Result<()> {
    let samples = load_corpus(&args.corpus)?;
    require_input(&args.issues, "issues", "detect")?;
    let issues: Vec<Issue> = read_jsonl(&args.issues)?;
    let annotators: Vec<String> = args
        .annotators
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(String::from)
        .collect();
    if annotators.is_empty() {
        bail!("--annotators needs at least one id");
    }
    let store = JournalStore::open(&args.journal)?;
    let service = Arc::new(AnnotationService::new(samples, issues, annotators, store)?);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(traceaudit_server::serve(addr, service))?;
    Ok(())
}

fn validate_cmd(args: &ValidateArgs) -> Result<()> {
    let samples = load_corpus(&args.corpus)?;
    let mut notes = vec![format!("{} samples", samples.len())];
    if let Some(path) = &args.issues {
        let issues: Vec<Issue> = read_jsonl(path)?;
        for issue in &issues {
            let sample = samples
                .iter()
                .find(|s| s.id == issue.sample_id)
                .ok_or_else(|| anyhow!("issue {} refers to unknown sample {:?}", issue.id(), issue.sample_id))?;
            let count = tokenize_trace(&sample.trace).len();
            if issue.trace_sentence_idx >= count {
                log::warn!(
                    "issue {}: sentence index {} outside trace of {count} sentences",
                    issue.id(),
                    issue.trace_sentence_idx
                );
            }
        }
        notes.push(format!("{} issues", issues.len()));
    }
    if let Some(path) = &args.specs {
        let specs: Vec<ReplaySpec> = read_jsonl(path)?;
        if let Some(spec) = specs.iter().find(|s| !samples.iter().any(|x| x.id == s.sample_id)) {
            bail!("spec {} refers to unknown sample {:?}", spec.id(), spec.sample_id);
        }
        notes.push(format!("{} specs", specs.len()));
    }
    if let Some(path) = &args.records {
        let records: Vec<AnnotationRecord> = read_jsonl(path)?;
        for (i, record) in records.iter().enumerate() {
            record
                .validate()
                .with_context(|| format!("{} record {}", path.display(), i + 1))?;
        }
        notes.push(format!("{} annotation records", records.len()));
    }
    println!("ok: {}", notes.join(", "));
    Ok(())
}

/// File names inside a `run` output directory.
pub mod layout {
    pub const MANIFEST: &str = "manifest.json";
    pub const ISSUES: &str = "issues.jsonl";
    pub const SPECS: &str = "specs.jsonl";
    pub const SKIPPED: &str = "skipped.jsonl";
    pub const REPLAYS: &str = "replays.jsonl";
    pub const VERDICTS: &str = "verdicts.jsonl";
    pub const DELTAS: &str = "deltas.jsonl";
    pub const REPORT_JSONL: &str = "report.jsonl";
    pub const DETECTION_JSONL: &str = "detection.jsonl";
    pub const REPORT_TXT: &str = "report.txt";
}

fn run_cmd(settings: &Settings, args: &RunArgs) -> Result<()> {
    use layout::*;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let samples = load_corpus(&args.corpus)?;
    let cfg = settings.judge_config(&args.judge)?;
    let kinds = settings.kinds(args.kinds.as_deref())?;
    let metric = settings.metric(args.metric.as_deref())?;
    let (judge, judge_label) = settings.backend(&args.backends, Role::Judge)?;
    let (translator, translator_label) = settings.backend(&args.backends, Role::Translator)?;
    let ctx = settings.context(args.fresh)?;

    let outputs = [
        ISSUES,
        SPECS,
        SKIPPED,
        REPLAYS,
        VERDICTS,
        DELTAS,
        REPORT_JSONL,
        DETECTION_JSONL,
        REPORT_TXT,
    ];
    let mut manifest = RunManifest::new("run", settings.max_concurrency);
    manifest.judge = Some(cfg);
    manifest.judge_backend = Some(judge_label);
    manifest.translator_backend = Some(translator_label);
    manifest.kinds = kinds.clone();
    manifest.metric = Some(metric.name().to_string());
    manifest.inputs = RunManifest::digest_inputs(&[&args.corpus.corpus])?;
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    let manifest_path = dir.join(MANIFEST);
    write_atomic(&manifest_path, &manifest.to_json())?;
    let stamp = |name: &str, stage: &str| write_stamp(&dir.join(name), stage, &manifest_path);

    log::info!("detect: {} samples", samples.len());
    let issues = run_detect(&ctx, &samples, &cfg, judge.as_ref(), &dir.join("detect.progress.jsonl"))?;
    write_jsonl(&dir.join(ISSUES), &issues)?;
    stamp(ISSUES, "detect")?;

    let (specs, skipped) = run_intervene(&samples, &issues, &kinds)?;
    write_jsonl(&dir.join(SPECS), &specs)?;
    write_jsonl(&dir.join(SKIPPED), &skipped)?;
    stamp(SPECS, "intervene")?;
    stamp(SKIPPED, "intervene")?;

    log::info!("replay: {} specs", specs.len());
    let replays = run_replay(
        &ctx,
        &samples,
        &specs,
        translator.as_ref(),
        &dir.join("replay.progress.jsonl"),
    )?;
    write_jsonl(&dir.join(REPLAYS), &replays)?;
    stamp(REPLAYS, "replay")?;

    log::info!("score: {} replays", replays.len());
    let verdicts = run_fix_judge(
        &ctx,
        &samples,
        &issues,
        &replays,
        judge.as_ref(),
        &dir.join("score.progress.jsonl"),
    )?;
    let deltas = run_metric(&samples, &replays, &metric)?;
    write_jsonl(&dir.join(VERDICTS), &verdicts)?;
    write_jsonl(&dir.join(DELTAS), &deltas)?;
    stamp(VERDICTS, "score")?;
    stamp(DELTAS, "score")?;

    let report = aggregate(&verdicts, &deltas)?;
    write_jsonl(&dir.join(REPORT_JSONL), &report.rows)?;
    stamp(REPORT_JSONL, "aggregate")?;
    let detection = detection_rows(&samples, &issues)?;
    write_jsonl(&dir.join(DETECTION_JSONL), &detection)?;
    stamp(DETECTION_JSONL, "report")?;
    let text = render_full_report(Some(&report), Some((&samples, &issues)))?;
    write_atomic(&dir.join(REPORT_TXT), text.as_bytes())?;
    stamp(REPORT_TXT, "report")?;
    Ok(())
}
