use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Series};
use crate::probe::{ProbeRecord, Protocol};

pub const DEFAULT_ALIGNMENT_WINDOW_S: u64 = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    RegionChange,
    #[serde(rename = "HTTP_2_HTTPS")]
    Http2Https,
    #[serde(rename = "HTTPS_2_HTTP")]
    Https2Http,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::RegionChange, Strategy::Http2Https, Strategy::Https2Http];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RegionChange => "REGION_CHANGE",
            Strategy::Http2Https => "HTTP_2_HTTPS",
            Strategy::Https2Http => "HTTPS_2_HTTP",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointRatio {
    pub endpoint_id: String,
    /// Failures with at least one counterpart record in the window.
    pub failures: u64,
    pub recovered: u64,
    pub unalignable: u64,
    /// Undefined when no failure could be aligned.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub per_endpoint: Vec<EndpointRatio>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub avg: Option<f64>,
    pub notes: Vec<String>,
}

/// Counts counterpart records inside `[t - w, t + w]` and whether any succeeded.
fn lookup(counterpart: &[ProbeRecord], t: i64, w: i64) -> (bool, bool) {
    let lo = counterpart.partition_point(|r| r.timestamp_ms < t - w);
    let hi = counterpart.partition_point(|r| r.timestamp_ms <= t + w);
    let window = &counterpart[lo..hi];
    (!window.is_empty(), window.iter().any(ProbeRecord::is_success))
}

/// Share of failed requests that the strategy would have rescued.
pub fn failover_ratios(
    series: &[Series],
    strategy: Strategy,
    alignment_window_s: u64,
) -> Result<StrategyOutcome, AnalysisError> {
    if alignment_window_s == 0 {
        return Err(AnalysisError::InvalidParameter("alignment window must be positive".into()));
    }
    let w = alignment_window_s as i64 * 1000;
    let http: Vec<&Series> = series.iter().filter(|s| s.key.protocol.is_http()).collect();

    // (failing series, counterpart series)
    let mut pairs: Vec<(&Series, Vec<&Series>)> = Vec::new();
    match strategy {
        Strategy::RegionChange => {
            for s in &http {
                let others: Vec<&Series> = http
                    .iter()
                    .copied()
                    .filter(|o| {
                        o.key.endpoint_id == s.key.endpoint_id
                            && o.key.protocol == s.key.protocol
                            && o.key.vantage != s.key.vantage
                    })
                    .collect();
                if !others.is_empty() {
                    pairs.push((s, others));
                }
            }
            if pairs.is_empty() {
                return Err(AnalysisError::NoData(
                    "region change needs an endpoint seen from at least two vantages".into(),
                ));
            }
        }
        Strategy::Http2Https | Strategy::Https2Http => {
            let (from, to) = if strategy == Strategy::Http2Https {
                (Protocol::Http, Protocol::Https)
            } else {
                (Protocol::Https, Protocol::Http)
            };
            for s in http.iter().filter(|s| s.key.protocol == from) {
                if let Some(o) = http.iter().find(|o| {
                    o.key.protocol == to
                        && o.key.endpoint_id == s.key.endpoint_id
                        && o.key.vantage == s.key.vantage
                }) {
                    pairs.push((s, vec![*o]));
                }
            }
            if pairs.is_empty() {
                return Err(AnalysisError::NoData(
                    "protocol change needs both HTTP and HTTPS series from one vantage".into(),
                ));
            }
        }
    }

    let mut per: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (s, counterparts) in pairs {
        let entry = per.entry(s.key.endpoint_id.clone()).or_default();
        for r in s.records.iter().filter(|r| !r.is_success()) {
            let (mut aligned, mut rescued) = (false, false);
            for c in &counterparts {
                let (a, ok) = lookup(&c.records, r.timestamp_ms, w);
                aligned |= a;
                rescued |= ok;
            }
            if !aligned {
                entry.2 += 1;
            } else {
                entry.0 += 1;
                if rescued {
                    entry.1 += 1;
                }
            }
        }
    }

    let mut notes = Vec::new();
    let mut excluded = BTreeSet::new();
    let per_endpoint: Vec<EndpointRatio> = per
        .into_iter()
        .map(|(endpoint_id, (failures, recovered, unalignable))| {
            let ratio = (failures > 0).then(|| recovered as f64 / failures as f64);
            if ratio.is_none() {
                excluded.insert(endpoint_id.clone());
            }
            EndpointRatio {
                endpoint_id,
                failures,
                recovered,
                unalignable,
                ratio,
            }
        })
        .collect();
    if !excluded.is_empty() {
        notes.push(format!(
            "excluded (no alignable failures, ratio undefined): {}",
            excluded.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    let unalignable: u64 = per_endpoint.iter().map(|e| e.unalignable).sum();
    if unalignable > 0 {
        notes.push(format!("{unalignable} failure(s) had no counterpart record in the window"));
    }
    let ratios: Vec<f64> = per_endpoint.iter().filter_map(|e| e.ratio).collect();
    let (min, max, avg) = if ratios.is_empty() {
        (None, None, None)
    } else {
        (
            ratios.iter().copied().reduce(f64::min),
            ratios.iter().copied().reduce(f64::max),
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64),
        )
    };
    Ok(StrategyOutcome {
        strategy,
        per_endpoint,
        min,
        max,
        avg,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::series_from_records;
    use crate::probe::{classify_outcome, FailureKind};

    fn rec(ep: &str, p: Protocol, v: &str, ts: i64, ok: bool) -> ProbeRecord {
        ProbeRecord {
            timestamp_ms: ts,
            vantage: v.into(),
            endpoint_id: ep.into(),
            protocol: p,
            latency_ms: 1.0,
            outcome: if ok {
                classify_outcome(Some(200), None).unwrap()
            } else {
                classify_outcome(None, Some(FailureKind::Timeout)).unwrap()
            },
            bytes: 0,
            packets_sent: None,
            packets_lost: None,
        }
    }

    #[test]
    fn region_change_within_window() {
        let recs = vec![
            rec("e", Protocol::Http, "a", 0, false),
            rec("e", Protocol::Http, "b", 30_000, true),
        ];
        let (s, _) = series_from_records(recs, 300, 2.0).unwrap();
        let out = failover_ratios(&s, Strategy::RegionChange, 150).unwrap();
        assert_eq!(out.per_endpoint[0].ratio, Some(1.0));
        assert_eq!(out.avg, Some(1.0));
    }

    #[test]
    fn simultaneous_failure_is_zero() {
        let recs = vec![
            rec("e", Protocol::Http, "a", 0, false),
            rec("e", Protocol::Http, "b", 1_000, false),
        ];
        let (s, _) = series_from_records(recs, 300, 2.0).unwrap();
        let out = failover_ratios(&s, Strategy::RegionChange, 150).unwrap();
        assert_eq!(out.per_endpoint[0].failures, 2);
        assert_eq!(out.per_endpoint[0].ratio, Some(0.0));
    }

    #[test]
    fn window_edges_are_inclusive_and_unalignable_counted() {
        let recs = vec![
            rec("e", Protocol::Http, "a", 0, false),
            rec("e", Protocol::Https, "a", 150_000, true),
            rec("e", Protocol::Http, "a", 1_000_000, false),
        ];
        let (s, _) = series_from_records(recs, 300, 2.0).unwrap();
        let out = failover_ratios(&s, Strategy::Http2Https, 150).unwrap();
        let e = &out.per_endpoint[0];
        assert_eq!((e.failures, e.recovered, e.unalignable), (1, 1, 1));
    }

    #[test]
    fn zero_failure_endpoints_are_excluded() {
        let recs = vec![
            rec("good", Protocol::Http, "a", 0, true),
            rec("good", Protocol::Http, "b", 0, true),
            rec("bad", Protocol::Http, "a", 0, false),
            rec("bad", Protocol::Http, "b", 0, true),
        ];
        let (s, _) = series_from_records(recs, 300, 2.0).unwrap();
        let out = failover_ratios(&s, Strategy::RegionChange, 150).unwrap();
        assert_eq!(out.min, Some(1.0));
        assert_eq!(out.max, Some(1.0));
        assert_eq!(out.notes.len(), 1);
    }

    #[test]
    fn needs_counterparts() {
        let (s, _) = series_from_records(vec![rec("e", Protocol::Http, "a", 0, false)], 300, 2.0).unwrap();
        assert!(failover_ratios(&s, Strategy::RegionChange, 150).is_err());
        assert!(failover_ratios(&s, Strategy::Http2Https, 150).is_err());
        assert!(failover_ratios(&s, Strategy::RegionChange, 0).is_err());
    }

    #[test]
    fn relabelling_vantages_is_symmetric() {
        let mut recs = Vec::new();
        for i in 0..50 {
            recs.push(rec("e", Protocol::Http, "a", i * 300_000, i % 3 == 0));
            recs.push(rec("e", Protocol::Http, "b", i * 300_000 + 10_000, i % 5 == 0));
        }
        let swapped: Vec<_> = recs
            .iter()
            .cloned()
            .map(|mut r| {
                r.vantage = if r.vantage == "a" { "b".into() } else { "a".into() };
                r
            })
            .collect();
        let (s1, _) = series_from_records(recs, 300, 2.0).unwrap();
        let (s2, _) = series_from_records(swapped, 300, 2.0).unwrap();
        assert_eq!(
            failover_ratios(&s1, Strategy::RegionChange, 150).unwrap().per_endpoint,
            failover_ratios(&s2, Strategy::RegionChange, 150).unwrap().per_endpoint
        );
    }
}
