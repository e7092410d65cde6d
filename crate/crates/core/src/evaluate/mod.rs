//! Resolution judging, quality metrics and report aggregation.

pub mod chrf;
pub mod external;
pub mod report;
pub mod resolution;

pub use chrf::{chrf, chrf_default, ChrfError};
pub use external::{score_with_external, ScorerCommand, ScorerError, ScoringPair};
pub use report::{
    aggregate, detection_rows, format_delta, format_percent, format_rate, render_detection, render_report,
    AggregateReport, AggregateRow, DeltaRecord, DetectionRow, ReportError, Tally, VerdictRecord,
};
pub use resolution::{judge_resolution, same_issue, ResolutionVerdict, FIX_JUDGE_FAILED};
