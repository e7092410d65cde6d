//! Two-phase human validation: records, durable storage, task assignment
//! and summary statistics.

pub mod records;
pub mod service;
pub mod stats;
pub mod store;

/// JSON Schema for [`AnnotationRecord`], shared with browser clients.
pub const RECORD_SCHEMA: &str = include_str!("../../schemas/annotation_record.schema.json");

pub use records::{
    AnnotationRecord, Confidence, ErrorLabel, IsError, Phase, Phase1Record, Phase1Verdict, Phase2Record, RecordError,
    Reflected,
};
pub use service::{Ack, AnnotationService, Highlight, NextTask, ServiceError, TaskPayload};
pub use stats::{
    majority, render_validation, summarize_validation, Correctness, CorrectnessCounts, CoverageWarning, Majority,
    StatsError, ValidationCounts, ValidationSummary,
};
pub use store::{JournalStore, StoreError};
