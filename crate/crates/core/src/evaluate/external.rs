//! Scoring through an external child process.
//!
//! The child reads one `{"source", "hypothesis", "reference"}` object per
//! line on stdin and writes one decimal score per line on stdout, in order.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringPair {
    pub source: String,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer command is empty")]
    EmptyCommand,
    #[error("cannot start scorer {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scorer i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("scorer exited with {status}; stderr: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("scorer line {line}: cannot parse {text:?} as a score; stderr: {stderr}")]
    Malformed { line: usize, text: String, stderr: String },
    #[error("scorer returned {got} scores for {expected} inputs; stderr: {stderr}")]
    Count {
        expected: usize,
        got: usize,
        stderr: String,
    },
}

/// Program plus arguments, e.g. `["python3", "comet_wrapper.py"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerCommand {
    pub name: String,
    pub argv: Vec<String>,
}

impl ScorerCommand {
    /// Splits a descriptor on whitespace. No shell quoting is interpreted.
    pub fn parse(name: impl Into<String>, descriptor: &str) -> Result<Self, ScorerError> {
        let argv: Vec<String> = descriptor.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(ScorerError::EmptyCommand);
        }
        Ok(Self {
            name: name.into(),
            argv,
        })
    }
}

pub fn score_with_external(command: &ScorerCommand, pairs: &[ScoringPair]) -> Result<Vec<f64>, ScorerError> {
    let (program, args) = command.argv.split_first().ok_or(ScorerError::EmptyCommand)?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ScorerError::Spawn {
            program: program.clone(),
            source,
        })?;

    let mut payload = Vec::new();
    for pair in pairs {
        serde_json::to_writer(&mut payload, pair).expect("scoring pair serializes");
        payload.push(b'\n');
    }
    let mut stdin = child.stdin.take().expect("stdin piped");
    let writer = thread::spawn(move || -> std::io::Result<()> {
        // A scorer that exits early closes the pipe; that surfaces below.
        match stdin.write_all(&payload) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            other => other,
        }
    });
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let stderr_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });
    let mut stdout = String::new();
    child.stdout.take().expect("stdout piped").read_to_string(&mut stdout)?;
    let status = child.wait()?;
    writer.join().expect("writer thread")?;
    let stderr = stderr_reader.join().expect("stderr thread").trim().to_string();

    if !status.success() {
        return Err(ScorerError::Exit {
            status: status.to_string(),
            stderr,
        });
    }
    let mut scores = Vec::with_capacity(pairs.len());
    for (i, line) in stdout.lines().enumerate() {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let score: f64 = text.parse().map_err(|_| ScorerError::Malformed {
            line: i + 1,
            text: text.to_string(),
            stderr: stderr.clone(),
        })?;
        if !score.is_finite() {
            return Err(ScorerError::Malformed {
                line: i + 1,
                text: text.to_string(),
                stderr,
            });
        }
        scores.push(score);
    }
    if scores.len() != pairs.len() {
        return Err(ScorerError::Count {
            expected: pairs.len(),
            got: scores.len(),
            stderr,
        });
    }
    Ok(scores)
}
