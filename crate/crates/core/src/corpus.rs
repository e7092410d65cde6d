//! Triplet corpora, language pairs and trace sentence tokenization.
//!
//! A corpus is a JSON Lines file with one record per line:
//!
//! ```text
//! {"id": "...", "src_lang": "en", "tgt_lang": "es", "source": "...",
//!  "trace": "...", "output": "...", "reference": "...", "model_tag": "..."}
//! ```
//!
//! `reference` and `model_tag` are optional. The `parallel` format carries
//! only `id`, `src_lang`, `tgt_lang`, `source` and `reference`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sentence index {index} out of range ({count} sentences)")]
    SentenceOutOfRange { index: usize, count: usize },
    #[error("unknown language code {0:?}")]
    UnknownCode(String),
}

/// Language codes with a shipped display name.
const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("hi", "Hindi"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("nl", "Dutch"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("tr", "Turkish"),
    ("ur", "Urdu"),
    ("yue", "Cantonese"),
    ("zh", "Chinese"),
];

/// Display name for a language code from the shipped table.
pub fn language_name(code: &str) -> Result<&'static str, CorpusError> {
    LANGUAGE_NAMES
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, name)| *name)
        .ok_or_else(|| CorpusError::UnknownCode(code.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguagePair {
    pub source_code: String,
    pub target_code: String,
    pub source_name: Option<String>,
    pub target_name: Option<String>,
}

impl LanguagePair {
    /// Builds a pair from two tags. Tags are lowercased; unknown codes are
    /// accepted and simply carry no display name.
    pub fn new(source_code: &str, target_code: &str) -> Result<Self, String> {
        let source_code = normalize_code(source_code)?;
        let target_code = normalize_code(target_code)?;
        Ok(Self {
            source_name: language_name(&source_code).ok().map(str::to_string),
            target_name: language_name(&target_code).ok().map(str::to_string),
            source_code,
            target_code,
        })
    }

    /// `en-de` style key used in reports.
    pub fn key(&self) -> String {
        format!("{}-{}", self.source_code, self.target_code)
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source_code, self.target_code)
    }
}

fn normalize_code(code: &str) -> Result<String, String> {
    let code = code.trim();
    if code.is_empty() {
        return Err("empty language code".to_string());
    }
    Ok(code.to_lowercase())
}

/// One audited triplet (source, trace, output) with its language pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub pair: LanguagePair,
    pub source: String,
    pub trace: String,
    pub output: String,
    pub reference: Option<String>,
    pub model_tag: String,
}

/// On-disk shape of a [`Sample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    src_lang: String,
    tgt_lang: String,
    source: String,
    #[serde(default)]
    trace: String,
    #[serde(default)]
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    model_tag: String,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            src_lang: s.pair.source_code.clone(),
            tgt_lang: s.pair.target_code.clone(),
            source: s.source.clone(),
            trace: s.trace.clone(),
            output: s.output.clone(),
            reference: s.reference.clone(),
            model_tag: s.model_tag.clone(),
        }
    }
}

impl Serialize for Sample {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SampleRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sample {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = SampleRecord::deserialize(deserializer)?;
        let pair = LanguagePair::new(&rec.src_lang, &rec.tgt_lang).map_err(serde::de::Error::custom)?;
        Ok(Sample {
            id: rec.id,
            pair,
            source: rec.source,
            trace: rec.trace,
            output: rec.output,
            reference: rec.reference,
            model_tag: rec.model_tag,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Full (source, trace, output) records.
    Triplets,
    /// Source + reference only; trace and output are left empty.
    Parallel,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triplets" => Ok(Self::Triplets),
            "parallel" => Ok(Self::Parallel),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

pub fn load_samples(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Sample>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_samples(&text, format)
}

/// Parses JSONL corpus text. Blank lines are ignored but still counted.
pub fn parse_samples(text: &str, format: CorpusFormat) -> Result<Vec<Sample>, CorpusError> {
    let required: &[&'static str] = match format {
        CorpusFormat::Triplets => &["id", "src_lang", "tgt_lang", "source", "output"],
        CorpusFormat::Parallel => &["id", "src_lang", "tgt_lang", "source", "reference"],
    };
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        for field in required {
            if obj.get(*field).is_none_or(Value::is_null) {
                return Err(CorpusError::MissingField { line, field });
            }
        }
        let mut sample: Sample = serde_json::from_value(Value::Object(obj)).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        match format {
            CorpusFormat::Triplets => {
                for (name, value) in [("source", &sample.source), ("output", &sample.output)] {
                    if value.trim().is_empty() {
                        return Err(CorpusError::Malformed {
                            line,
                            message: format!("empty field {name}"),
                        });
                    }
                }
            }
            CorpusFormat::Parallel => {
                if sample.source.trim().is_empty() {
                    return Err(CorpusError::Malformed {
                        line,
                        message: "empty field source".to_string(),
                    });
                }
                sample.trace.clear();
                sample.output.clear();
            }
        }
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn save_samples(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One sentence of a tokenized trace. `span` is a byte range into the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSentence {
    pub index: usize,
    pub text: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedTrace {
    pub sentences: Vec<TraceSentence>,
}

impl TokenizedTrace {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The `idx`-th sentence and its byte span.
    pub fn sentence_at(&self, idx: usize) -> Result<(&str, (usize, usize)), CorpusError> {
        self.sentences
            .get(idx)
            .map(|s| (s.text.as_str(), s.span))
            .ok_or(CorpusError::SentenceOutOfRange {
                index: idx,
                count: self.sentences.len(),
            })
    }

    /// Indices of sentences whose span intersects `[start, end)`.
    pub fn covering(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let mut hit = self
            .sentences
            .iter()
            .filter(|s| s.span.0 < end && start < s.span.1)
            .map(|s| s.index);
        let first = hit.next()?;
        let last = hit.next_back().unwrap_or(first);
        Some((first, last))
    }
}

/// Tokens that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "jr.", "sr.", "no.", "approx.",
    "lit.", "fig.", "ca.", "esp.", "incl.", "a.m.", "p.m.",
];

const CJK_TERMINATORS: &[char] = &['。', '！', '？'];
/// Terminators that end a sentence only when whitespace follows.
const SPACED_TERMINATORS: &[char] = &['.', '!', '?', '…', '؟', '۔'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '”', '’', '»', '」', '』', '）', '】'];

/// Splits a trace into sentences.
///
/// Boundaries fall after `.`, `!`, `?` (or an ellipsis, or the Arabic-script
/// `؟` and `۔`) followed by whitespace, directly after CJK terminators, and
/// at blank lines. Closing quotes and brackets directly after the terminator
/// stay with the sentence. A period does not end a sentence after a listed
/// abbreviation or after a line-initial list number (`1.`). An ellipsis, or
/// any terminator inside closing quotes, does not end one when the next word
/// starts in lowercase.
pub fn tokenize_trace(trace: &str) -> TokenizedTrace {
    let mut sentences = Vec::new();
    for (start, end) in raw_segments(trace) {
        let seg = &trace[start..end];
        let lead = seg.len() - seg.trim_start().len();
        let trail = seg.len() - seg.trim_end().len();
        let (s, e) = (start + lead, end - trail);
        if s < e {
            sentences.push(TraceSentence {
                index: sentences.len(),
                text: trace[s..e].to_string(),
                span: (s, e),
            });
        }
    }
    TokenizedTrace { sentences }
}

fn raw_segments(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i].1;
        if c == '\n' {
            // Blank line: newline, optional horizontal whitespace, newline.
            let mut j = i + 1;
            while j < n && chars[j].1 != '\n' && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < n && chars[j].1 == '\n' {
                cuts.push(byte_at(i));
                i = j;
                continue;
            }
            i += 1;
            continue;
        }
        if CJK_TERMINATORS.contains(&c) {
            let mut j = i + 1;
            while j < n && (CJK_TERMINATORS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1)) {
                j += 1;
            }
            if j < n {
                cuts.push(byte_at(j));
            }
            i = j;
            continue;
        }
        if SPACED_TERMINATORS.contains(&c) {
            let mut j = i + 1;
            while j < n && SPACED_TERMINATORS.contains(&chars[j].1) {
                j += 1;
            }
            let run_end = j;
            while j < n && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            if j < n && chars[j].1.is_whitespace() && !suppressed(text, &chars, i, run_end, j) {
                cuts.push(byte_at(j));
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for cut in cuts {
        if cut > start {
            segments.push((start, cut));
        }
        start = cut;
    }
    if start < text.len() {
        segments.push((start, text.len()));
    }
    segments
}

/// Whether the terminator run `chars[run_start..run_end]` (followed by
/// whitespace at `ws`) should not end the sentence.
fn suppressed(text: &str, chars: &[(usize, char)], run_start: usize, run_end: usize, ws: usize) -> bool {
    let run: String = chars[run_start..run_end].iter().map(|(_, c)| *c).collect();
    let next_word_lowercase = chars[ws..]
        .iter()
        .map(|(_, c)| *c)
        .find(|c| !c.is_whitespace())
        .is_some_and(char::is_lowercase);
    if run == "..." || run == "…" || ws > run_end {
        return next_word_lowercase;
    }
    if run != "." {
        return false;
    }
    // Token ending at the period, back to the previous whitespace.
    let mut k = run_start;
    while k > 0 && !chars[k - 1].1.is_whitespace() {
        k -= 1;
    }
    let token_start = chars[k].0;
    let token = &text[token_start..chars[run_end - 1].0 + 1];
    let lower = token.to_lowercase();
    let word = lower.trim_start_matches(['(', '"', '\'', '“', '‘', '[']);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let digits = &token[..token.len() - 1];
    let before = text[..token_start].trim_end_matches([' ', '\t']);
    let line_initial = before.is_empty() || before.ends_with('\n');
    line_initial && !digits.is_empty() && digits.len() <= 3 && digits.chars().all(|c| c.is_ascii_digit())
}
