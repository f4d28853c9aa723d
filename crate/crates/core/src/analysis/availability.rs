use serde::{Deserialize, Serialize};

use super::{AnalysisError, Series};
use crate::probe::{ProbeRecord, Protocol};

/// Record counts behind each fraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denominators {
    pub records: u64,
    pub packets_sent: u64,
    pub packets_lost: u64,
    /// Records carrying any HTTP status code.
    pub with_status: u64,
    pub successful: u64,
    pub failures: u64,
}

/// Shares of non-successful records by cause; sums to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureDistribution {
    pub client_4xx: f64,
    pub server_5xx: f64,
    pub none: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityReport {
    /// Echo series only.
    pub pingability: Option<f64>,
    /// HTTP and HTTPS series only.
    pub accessibility: Option<f64>,
    pub successability: Option<f64>,
    pub denominators: Denominators,
    /// Absent when there were no failures.
    pub failure_distribution: Option<FailureDistribution>,
}

pub fn availability(series: &Series) -> Result<AvailabilityReport, AnalysisError> {
    availability_of(series.key.protocol, &series.records)
        .map_err(|_| AnalysisError::NoData(series.key.to_string()))
}

/// Availability over records of one protocol. Records missing because of a
/// gap are simply absent, so they count towards nothing.
pub fn availability_of(
    protocol: Protocol,
    records: &[ProbeRecord],
) -> Result<AvailabilityReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::NoData(protocol.to_string()));
    }
    let mut d = Denominators::default();
    let (mut c4, mut c5, mut none) = (0u64, 0u64, 0u64);
    for r in records {
        d.records += 1;
        if let (Some(sent), Some(lost)) = (r.packets_sent, r.packets_lost) {
            d.packets_sent += u64::from(sent);
            d.packets_lost += u64::from(lost);
        }
        if r.outcome.status_code.is_some() {
            d.with_status += 1;
        }
        if r.is_success() {
            d.successful += 1;
        } else {
            d.failures += 1;
            match r.outcome.status_code {
                Some(400..=499) => c4 += 1,
                Some(500..=599) => c5 += 1,
                _ => none += 1,
            }
        }
    }
    let n = d.records as f64;
    let (pingability, accessibility, successability) = if protocol.is_http() {
        (
            None,
            Some(d.with_status as f64 / n),
            Some(d.successful as f64 / n),
        )
    } else {
        let ping = if d.packets_sent > 0 {
            Some(1.0 - d.packets_lost as f64 / d.packets_sent as f64)
        } else {
            None
        };
        (ping, None, None)
    };
    let failure_distribution = (d.failures > 0).then(|| {
        let f = d.failures as f64;
        FailureDistribution {
            client_4xx: c4 as f64 / f,
            server_5xx: c5 as f64 / f,
            none: none as f64 / f,
        }
    });
    Ok(AvailabilityReport {
        pingability,
        accessibility,
        successability,
        denominators: d,
        failure_distribution,
    })
}
