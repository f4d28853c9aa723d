//! Quality benchmarking for public web APIs.
//!
//! The crate is split along the life of a measurement:
//!
//! * [`probe`] issues single ICMP/HTTP/HTTPS measurements and classifies them.
//! * [`tlsscan`] walks a server's cipher-suite preference order and scores it.
//! * [`runner`] schedules probes and scans, appends them to day-rotated logs and
//!   serves a liveness page for external watchdogs.
//! * [`analysis`] loads logs back and computes availability, latency, failover
//!   and security-score aggregates.
//! * [`mocknet`] is a fault-injecting endpoint driven by a declarative plan,
//!   together with the analytical oracle for what analysis must report.
//!
//! [`record`] holds the line formats shared by the runner and analysis.

pub mod analysis;
pub mod mocknet;
pub mod probe;
pub mod record;
pub mod runner;
pub mod tlsscan;

mod httpio;

pub use analysis::{AvailabilityReport, LatencyStats, QualityReport, Series, SeriesKey};
pub use mocknet::{Behavior, FaultPlan};
pub use probe::{
    classify_outcome, EndpointSpec, FailureKind, OutcomeClass, ProbeOutcome, ProbeRecord,
    Protocol,
};
pub use record::CipherScanRecord;
pub use runner::{HealthSnapshot, RunConfig};
pub use tlsscan::{score_server, score_suite, CipherSuiteInfo, SuiteTable};

/// Milliseconds since the Unix epoch, UTC.
pub fn now_ms() -> i64 {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    now.as_millis() as i64
}
