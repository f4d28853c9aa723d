//! Measurement daemon: scheduling, durable logs, supervision and health.

mod config;
mod daemon;
mod health;
mod log;
mod schedule;

pub use config::{
    ConfigError, EchoBackendKind, RunConfig, DEFAULT_HEALTH_PORT, DEFAULT_PROBE_INTERVAL_S, DEFAULT_SCAN_INTERVAL_S,
    ENV_HEALTH_PORT, ENV_LOG_DIR, ENV_VANTAGE,
};
pub use daemon::{scan_options, start, NetworkExecutor, ProbeExecutor, RunError, RunOptions, RunnerHandle, Stopper};
pub use health::{HealthSnapshot, HealthState, RunnerFault, ScanHealth, SeriesHealth};
pub use log::{log_file_name, recover_dir, recover_log, scan_file_name, LogWriter, Recovery};
pub use schedule::{hashed_phase_ms, next_fire_ms, scan_phase_ms, series_phases, SeriesId};
