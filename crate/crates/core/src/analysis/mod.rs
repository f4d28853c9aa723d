//! Offline aggregates over record logs.
//!
//! Everything here is a pure function of loaded records. Missing data is kept
//! apart from failures: gaps in a series contribute to no denominator.

mod availability;
mod failover;
mod latency;
mod report;
mod scores;
mod series;

pub use availability::{availability, availability_of, AvailabilityReport, Denominators, FailureDistribution};
pub use failover::{failover_ratios, EndpointRatio, Strategy, StrategyOutcome, DEFAULT_ALIGNMENT_WINDOW_S};
pub use latency::{
    geofactor, latency_stats, latency_stats_of, percentile_nearest_rank, resample_daily,
    vantage_means, DailyMean, Geofactor, LatencyStats, DEFAULT_BIN_WIDTH_MS,
};
pub use report::{
    quality_report, write_report, ProtocolQuality, QualityReport, ReportOptions, ReportSummary,
    SummaryRow,
};
pub use scores::{
    compare_runs, lasting_changes, score_series, suite_census, ChangeEvent, KeyDelta,
    RunComparison, RunStats, SuiteCensus, DEFAULT_MIN_REL_CHANGE, DEFAULT_PERSISTENCE,
};
pub use series::{
    load_series, parse_log_text, series_from_records, Gap, LoadOutput, Quarantined, Series, SeriesKey,
    DEFAULT_GAP_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no data: {0}")]
    NoData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0}")]
    Io(String),
}
