//! Append-only JSONL journal of annotation records.
//!
//! Every accepted record is appended and fsync'd before it is acknowledged.
//! The latest record per (phase, item, annotator) wins. Compaction rewrites
//! the journal with only the winning records through a temporary file and
//! an atomic rename.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::records::{AnnotationRecord, Phase};

/// Appends between automatic compactions.
pub const COMPACT_EVERY: usize = 256;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type RecordKey = (Phase, String, String);

pub fn record_key(record: &AnnotationRecord) -> RecordKey {
    (
        record.phase(),
        record.item_id().to_string(),
        record.annotator_id().to_string(),
    )
}

pub struct JournalStore {
    path: PathBuf,
    file: File,
    records: BTreeMap<RecordKey, AnnotationRecord>,
    journal_lines: usize,
}

impl JournalStore {
    /// Opens or creates the journal and replays it. A torn final line (no
    /// trailing newline, unparseable) is dropped; any other bad line is an
    /// error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut records = BTreeMap::new();
        let mut journal_lines = 0;
        let mut torn = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io_err)?;
            let ends_with_newline = fs::read(&path).map_err(io_err)?.last().is_none_or(|&b| b == b'\n');
            let count = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<AnnotationRecord>(&line) {
                    Ok(record) => {
                        journal_lines += 1;
                        records.insert(record_key(&record), record);
                    }
                    Err(_) if i + 1 == count && !ends_with_newline => {
                        log::warn!("{}: dropping torn final line", path.display());
                        torn = true;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path,
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        let mut store = Self {
            path,
            file,
            records,
            journal_lines,
        };
        if torn || store.journal_lines > store.records.len() {
            store.compact()?;
        }
        Ok(store)
    }

    fn io_err(&self, source: io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.clone(),
            source,
        }
    }

    /// Durably appends `record`; returns true when it replaced an earlier one.
    pub fn append(&mut self, record: AnnotationRecord) -> Result<bool, StoreError> {
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| self.io_err(e))?;
        self.file.sync_data().map_err(|e| self.io_err(e))?;
        self.journal_lines += 1;
        let replaced = self.records.insert(record_key(&record), record).is_some();
        if self.journal_lines - self.records.len() >= COMPACT_EVERY {
            self.compact()?;
        }
        Ok(replaced)
    }

    /// Rewrites the journal to hold exactly the current records.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut out = File::create(&tmp).map_err(|e| self.io_err(e))?;
            for record in self.records.values() {
                let mut line = serde_json::to_vec(record).expect("record serializes");
                line.push(b'\n');
                out.write_all(&line).map_err(|e| self.io_err(e))?;
            }
            out.sync_all().map_err(|e| self.io_err(e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| self.io_err(e))?;
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        self.file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io_err(e))?;
        self.journal_lines = self.records.len();
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&AnnotationRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
