use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::probe::{ProbeRecord, Protocol};
use crate::record::{parse_line, CipherScanRecord, LogLine};

pub const DEFAULT_GAP_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub endpoint_id: String,
    pub protocol: Protocol,
    pub vantage: String,
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.endpoint_id, self.protocol, self.vantage)
    }
}

/// Interval with no records, bounded by the records on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub start_ms: i64,
    pub end_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub key: SeriesKey,
    /// Strictly increasing in timestamp.
    pub records: Vec<ProbeRecord>,
    pub gaps: Vec<Gap>,
}

impl Series {
    pub fn successful(&self) -> impl Iterator<Item = &ProbeRecord> {
        self.records.iter().filter(|r| r.is_success())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOutput {
    pub series: Vec<Series>,
    pub scans: Vec<CipherScanRecord>,
    pub quarantined: Vec<Quarantined>,
}

impl LoadOutput {
    pub fn get(&self, key: &SeriesKey) -> Option<&Series> {
        self.series.iter().find(|s| &s.key == key)
    }
}

fn check_params(interval_s: u64, gap_threshold: f64) -> Result<(), AnalysisError> {
    if interval_s == 0 {
        return Err(AnalysisError::InvalidParameter("interval must be positive".into()));
    }
    if !(gap_threshold > 1.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "gap threshold {gap_threshold} must exceed 1"
        )));
    }
    Ok(())
}

/// Partitions records into series, sorting each by timestamp. A record
/// repeating an earlier timestamp in its series is quarantined.
pub fn series_from_records(
    records: impl IntoIterator<Item = ProbeRecord>,
    interval_s: u64,
    gap_threshold: f64,
) -> Result<(Vec<Series>, Vec<Quarantined>), AnalysisError> {
    check_params(interval_s, gap_threshold)?;
    let mut groups: BTreeMap<SeriesKey, Vec<ProbeRecord>> = BTreeMap::new();
    for r in records {
        let key = SeriesKey {
            endpoint_id: r.endpoint_id.clone(),
            protocol: r.protocol,
            vantage: r.vantage.clone(),
        };
        groups.entry(key).or_default().push(r);
    }
    let limit = gap_threshold * interval_s as f64 * 1000.0;
    let mut quarantined = Vec::new();
    let mut out = Vec::with_capacity(groups.len());
    for (key, mut records) in groups {
        records.sort_by_key(|r| r.timestamp_ms);
        let mut kept: Vec<ProbeRecord> = Vec::with_capacity(records.len());
        for r in records {
            if kept.last().is_some_and(|p| p.timestamp_ms == r.timestamp_ms) {
                quarantined.push(Quarantined {
                    source: key.to_string(),
                    line: 0,
                    reason: format!("duplicate timestamp {}", r.timestamp_ms),
                });
                continue;
            }
            kept.push(r);
        }
        let gaps = kept
            .windows(2)
            .filter(|w| (w[1].timestamp_ms - w[0].timestamp_ms) as f64 > limit)
            .map(|w| Gap {
                start_ms: w[0].timestamp_ms,
                end_ms: w[1].timestamp_ms,
            })
            .collect();
        out.push(Series {
            key,
            records: kept,
            gaps,
        });
    }
    Ok((out, quarantined))
}

/// Parses log text line by line; bad lines are quarantined, never fatal.
pub fn parse_log_text(
    source: &str,
    text: &str,
    probes: &mut Vec<ProbeRecord>,
    scans: &mut Vec<CipherScanRecord>,
    quarantined: &mut Vec<Quarantined>,
) {
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(LogLine::Probe(r)) => probes.push(r),
            Ok(LogLine::Scan(s)) => scans.push(s),
            Err(e) => quarantined.push(Quarantined {
                source: source.to_string(),
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
}

/// Loads probe and scan records from log files. Input order does not matter.
pub fn load_series(
    paths: &[PathBuf],
    interval_s: u64,
    gap_threshold: f64,
) -> Result<LoadOutput, AnalysisError> {
    check_params(interval_s, gap_threshold)?;
    let mut probes = Vec::new();
    let mut scans = Vec::new();
    let mut quarantined = Vec::new();
    for path in paths {
        let source = path.display().to_string();
        match read_lossy(path) {
            Ok(text) => parse_log_text(&source, &text, &mut probes, &mut scans, &mut quarantined),
            Err(e) => quarantined.push(Quarantined {
                source,
                line: 0,
                reason: format!("unreadable: {e}"),
            }),
        }
    }
    let (series, dupes) = series_from_records(probes, interval_s, gap_threshold)?;
    quarantined.extend(dupes);
    scans.sort_by(|a, b| {
        (&a.endpoint_id, &a.vantage, a.timestamp_ms).cmp(&(&b.endpoint_id, &b.vantage, b.timestamp_ms))
    });
    scans.dedup();
    Ok(LoadOutput {
        series,
        scans,
        quarantined,
    })
}

fn read_lossy(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}
