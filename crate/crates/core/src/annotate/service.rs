//! Task assignment and record intake for the annotation workflow.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::records::{AnnotationRecord, Phase, RecordError};
use super::stats::{summarize_validation, StatsError, ValidationSummary, ANNOTATORS_PER_ITEM};
use super::store::{record_key, JournalStore, StoreError};
use crate::corpus::{tokenize_trace, Sample};
use crate::judge::Issue;
use crate::locate::locate_issue_edit_span;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("issue {issue:?} refers to sample {sample:?}, which is not in the corpus")]
    OrphanIssue { issue: String, sample: String },
}

/// Flagged span in the served trace. `start`/`end` count Unicode scalar
/// values; the `_utf16` pair counts UTF-16 code units for browser clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
    pub start_utf16: usize,
    pub end_utf16: usize,
}

impl Highlight {
    pub fn from_bytes(text: &str, (start, end): (usize, usize)) -> Self {
        let prefix = &text[..start];
        let body = &text[start..end];
        let start_chars = prefix.chars().count();
        let start_utf16 = prefix.encode_utf16().count();
        Self {
            start: start_chars,
            end: start_chars + body.chars().count(),
            start_utf16,
            end_utf16: start_utf16 + body.encode_utf16().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub phase: Phase,
    /// Sample id in phase 1, issue id in phase 2.
    pub item_id: String,
    pub sample_id: String,
    pub source_language: String,
    pub target_language: String,
    pub source: String,
    pub translation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight: Option<Highlight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextTask {
    Task(Box<TaskPayload>),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub phase: Phase,
    pub item_id: String,
    pub annotator_id: String,
    /// An earlier record for the same item and annotator was overwritten.
    pub replaced: bool,
}

struct State {
    store: JournalStore,
    assigned: HashMap<(Phase, String), BTreeSet<String>>,
}

pub struct AnnotationService {
    samples: Vec<Sample>,
    issues: Vec<Issue>,
    sample_index: HashMap<String, usize>,
    issue_index: HashMap<String, usize>,
    annotators: HashSet<String>,
    state: Mutex<State>,
}

impl AnnotationService {
    /// Existing journal records count as assignments.
    pub fn new(
        samples: Vec<Sample>,
        issues: Vec<Issue>,
        annotators: impl IntoIterator<Item = String>,
        store: JournalStore,
    ) -> Result<Self, ServiceError> {
        let sample_index: HashMap<String, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let mut unique = Vec::new();
        let mut issue_index = HashMap::new();
        for issue in issues {
            if !sample_index.contains_key(&issue.sample_id) {
                return Err(ServiceError::OrphanIssue {
                    issue: issue.id(),
                    sample: issue.sample_id.clone(),
                });
            }
            if let Entry::Vacant(slot) = issue_index.entry(issue.id()) {
                slot.insert(unique.len());
                unique.push(issue);
            }
        }
        let mut assigned: HashMap<(Phase, String), BTreeSet<String>> = HashMap::new();
        for record in store.records() {
            assigned
                .entry((record.phase(), record.item_id().to_string()))
                .or_default()
                .insert(record.annotator_id().to_string());
        }
        Ok(Self {
            samples,
            issues: unique,
            sample_index,
            issue_index,
            annotators: annotators.into_iter().collect(),
            state: Mutex::new(State { store, assigned }),
        })
    }

    fn item_ids(&self, phase: Phase) -> Vec<String> {
        match phase {
            Phase::One => self.samples.iter().map(|s| s.id.clone()).collect(),
            Phase::Two => self.issues.iter().map(Issue::id).collect(),
        }
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), RecordError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(RecordError::UnknownAnnotator(annotator.to_string()))
        }
    }

    fn payload(&self, phase: Phase, item_id: &str) -> TaskPayload {
        let (sample, issue) = match phase {
            Phase::One => (&self.samples[self.sample_index[item_id]], None),
            Phase::Two => {
                let issue = &self.issues[self.issue_index[item_id]];
                (&self.samples[self.sample_index[&issue.sample_id]], Some(issue))
            }
        };
        let (trace, highlight) = match issue {
            None => (None, None),
            Some(issue) => {
                let tok = tokenize_trace(&sample.trace);
                let span = locate_issue_edit_span(issue, &sample.trace, &tok);
                (
                    Some(sample.trace.clone()),
                    span.map(|s| Highlight::from_bytes(&sample.trace, s.span)),
                )
            }
        };
        TaskPayload {
            phase,
            item_id: item_id.to_string(),
            sample_id: sample.id.clone(),
            source_language: sample.pair.source_code.clone(),
            target_language: sample.pair.target_code.clone(),
            source: sample.source.clone(),
            translation: sample.output.clone(),
            trace,
            highlight,
        }
    }

    /// Hands out the annotator's pending item if any, else claims the first
    /// item they have not seen that still has fewer than three annotators.
    pub fn next_task(&self, annotator: &str, phase: Phase) -> Result<NextTask, ServiceError> {
        self.check_annotator(annotator)?;
        let mut state = self.state.lock().expect("annotation state poisoned");
        let items = self.item_ids(phase);
        let pending = items.iter().find(|item| {
            state
                .assigned
                .get(&(phase, (*item).clone()))
                .is_some_and(|who| who.contains(annotator))
                && state
                    .store
                    .get(&(phase, (*item).clone(), annotator.to_string()))
                    .is_none()
        });
        if let Some(item) = pending {
            return Ok(NextTask::Task(Box::new(self.payload(phase, item))));
        }
        for item in &items {
            let who = state.assigned.entry((phase, item.clone())).or_default();
            if who.contains(annotator) || who.len() >= ANNOTATORS_PER_ITEM {
                continue;
            }
            who.insert(annotator.to_string());
            return Ok(NextTask::Task(Box::new(self.payload(phase, item))));
        }
        Ok(NextTask::Done)
    }

    /// Validates and durably stores `record`. Resubmission for the same item
    /// and annotator replaces the earlier record.
    pub fn submit(&self, mut record: AnnotationRecord) -> Result<Ack, ServiceError> {
        record.validate()?;
        self.check_annotator(record.annotator_id())?;
        let phase = record.phase();
        let item = record.item_id().to_string();
        let known = match phase {
            Phase::One => self.sample_index.contains_key(&item),
            Phase::Two => self.issue_index.contains_key(&item),
        };
        if !known {
            return Err(RecordError::UnknownItem(item).into());
        }
        if record.timestamp().is_empty() {
            record.set_timestamp(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        }
        let mut state = self.state.lock().expect("annotation state poisoned");
        let served = state
            .assigned
            .get(&(phase, item.clone()))
            .is_some_and(|who| who.contains(record.annotator_id()));
        if !served {
            return Err(RecordError::NotServed {
                item,
                annotator: record.annotator_id().to_string(),
            }
            .into());
        }
        let (phase, item_id, annotator_id) = record_key(&record);
        let replaced = state.store.append(record)?;
        Ok(Ack {
            phase,
            item_id,
            annotator_id,
            replaced,
        })
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        let state = self.state.lock().expect("annotation state poisoned");
        state.store.records().cloned().collect()
    }

    pub fn summary(&self) -> Result<Vec<ValidationSummary>, ServiceError> {
        Ok(summarize_validation(&self.records(), &self.issues, &self.samples)?)
    }

    /// All current records as JSONL.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}
