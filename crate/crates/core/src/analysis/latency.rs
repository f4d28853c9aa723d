use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Series};
use crate::probe::Protocol;

pub const DEFAULT_BIN_WIDTH_MS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub bin_width_ms: f64,
    /// `(bin_start, count)`, ascending, empty bins omitted.
    pub histogram: Vec<(f64, u64)>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn latency_stats_of(values: &[f64], bin_width_ms: f64) -> Result<LatencyStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::NoData("no successful records".into()));
    }
    if !(bin_width_ms > 0.0) {
        return Err(AnalysisError::InvalidParameter("bin width must be positive".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
    for x in &sorted {
        *bins.entry((x / bin_width_ms).floor() as i64).or_default() += 1;
    }
    Ok(LatencyStats {
        count: sorted.len(),
        mean,
        stddev: var.sqrt(),
        p50: percentile_nearest_rank(&sorted, 50.0),
        p90: percentile_nearest_rank(&sorted, 90.0),
        p99: percentile_nearest_rank(&sorted, 99.0),
        bin_width_ms,
        histogram: bins
            .into_iter()
            .map(|(b, c)| (b as f64 * bin_width_ms, c))
            .collect(),
    })
}

/// Latency statistics over the successful records of a series.
pub fn latency_stats(series: &Series, bin_width_ms: f64) -> Result<LatencyStats, AnalysisError> {
    let values: Vec<f64> = series.successful().map(|r| r.latency_ms).collect();
    latency_stats_of(&values, bin_width_ms)
        .map_err(|e| match e {
            AnalysisError::NoData(_) => AnalysisError::NoData(series.key.to_string()),
            other => other,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geofactor {
    pub value: f64,
    pub max_vantage: String,
    pub min_vantage: String,
    /// Vantages left out for lack of data.
    pub excluded: Vec<String>,
}

/// Max over min of per-vantage mean latencies.
pub fn geofactor(means: &[(String, Option<f64>)]) -> Result<Geofactor, AnalysisError> {
    let mut excluded = Vec::new();
    let mut usable: Vec<(&str, f64)> = Vec::new();
    for (v, m) in means {
        match m {
            Some(x) if *x > 0.0 && x.is_finite() => usable.push((v, *x)),
            Some(x) => {
                return Err(AnalysisError::InvalidParameter(format!(
                    "vantage {v} has non-positive mean {x}"
                )))
            }
            None => excluded.push(v.clone()),
        }
    }
    if usable.len() < 2 {
        return Err(AnalysisError::NoData(format!(
            "geofactor needs two vantages with data, have {}",
            usable.len()
        )));
    }
    let (max_v, max) = usable
        .iter()
        .copied()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("non-empty");
    let (min_v, min) = usable
        .iter()
        .copied()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("non-empty");
    Ok(Geofactor {
        value: max / min,
        max_vantage: max_v.to_string(),
        min_vantage: min_v.to_string(),
        excluded,
    })
}

/// Mean latency of successful records per vantage for one endpoint and protocol.
pub fn vantage_means(series: &[Series], endpoint_id: &str, protocol: Protocol) -> Vec<(String, Option<f64>)> {
    series
        .iter()
        .filter(|s| s.key.endpoint_id == endpoint_id && s.key.protocol == protocol)
        .map(|s| {
            let ok: Vec<f64> = s.successful().map(|r| r.latency_ms).collect();
            let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
            (s.key.vantage.clone(), mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMean {
    pub day: NaiveDate,
    pub mean_ms: f64,
    pub count: usize,
}

/// Mean latency of successful records per UTC day; empty days are absent.
pub fn resample_daily(series: &Series) -> Vec<DailyMean> {
    let mut days: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for r in series.successful() {
        let Some(dt) = DateTime::from_timestamp_millis(r.timestamp_ms) else {
            continue;
        };
        let e = days.entry(dt.date_naive()).or_default();
        e.0 += r.latency_ms;
        e.1 += 1;
    }
    days.into_iter()
        .map(|(day, (sum, count))| DailyMean {
            day,
            mean_ms: sum / count as f64,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::series_from_records;
    use crate::probe::{classify_outcome, ProbeRecord};
    use proptest::prelude::*;

    fn series(points: &[(i64, f64)]) -> Series {
        let recs = points.iter().map(|&(ts, lat)| ProbeRecord {
            timestamp_ms: ts,
            vantage: "v".into(),
            endpoint_id: "e".into(),
            protocol: Protocol::Https,
            latency_ms: lat,
            outcome: classify_outcome(Some(200), None).unwrap(),
            bytes: 0,
            packets_sent: None,
            packets_lost: None,
        });
        series_from_records(recs, 300, 2.0).unwrap().0.remove(0)
    }

    #[test]
    fn constant_series() {
        let s = latency_stats_of(&[100.0; 10], 50.0).unwrap();
        assert_eq!(s.p90, 100.0);
        assert_eq!(s.stddev, 0.0);
        assert_eq!(s.histogram, vec![(100.0, 10)]);
    }

    #[test]
    fn one_to_hundred() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        v.reverse();
        let s = latency_stats_of(&v, 50.0).unwrap();
        assert_eq!(s.p90, 90.0);
        assert_eq!(s.p50, 50.0);
        assert_eq!(s.p99, 99.0);
        assert_eq!(s.histogram, vec![(0.0, 49), (50.0, 50), (100.0, 1)]);
    }

    #[test]
    fn empty_is_no_data() {
        assert!(matches!(latency_stats_of(&[], 50.0), Err(AnalysisError::NoData(_))));
    }

    #[test]
    fn geofactor_examples() {
        let m = |xs: &[f64]| xs.iter().enumerate().map(|(i, x)| (format!("v{i}"), Some(*x))).collect::<Vec<_>>();
        assert_eq!(geofactor(&m(&[100.0, 100.0])).unwrap().value, 1.0);
        assert_eq!(geofactor(&m(&[50.0, 200.0, 1600.0])).unwrap().value, 32.0);
        let mut with_gap = m(&[10.0, 20.0]);
        with_gap.push(("dead".into(), None));
        let g = geofactor(&with_gap).unwrap();
        assert_eq!(g.excluded, vec!["dead".to_string()]);
        assert!(geofactor(&m(&[10.0])).is_err());
    }

    #[test]
    fn daily_resampling() {
        let day = 86_400_000;
        let s = series(&[(0, 100.0), (1_000, 100.0), (day, 150.0), (day + 5, 250.0), (3 * day, 7.0)]);
        let d = resample_daily(&s);
        let means: Vec<f64> = d.iter().map(|x| x.mean_ms).collect();
        assert_eq!(means, vec![100.0, 200.0, 7.0]);
        assert_eq!(d[2].day, NaiveDate::from_ymd_opt(1970, 1, 4).unwrap());
    }

    proptest! {
        #[test]
        fn geofactor_at_least_one(xs in proptest::collection::vec(0.1f64..1e4, 2..8)) {
            let m: Vec<_> = xs.iter().enumerate().map(|(i, x)| (i.to_string(), Some(*x))).collect();
            let g = geofactor(&m).unwrap().value;
            prop_assert!(g >= 1.0);
            let all_equal = xs.iter().all(|x| *x == xs[0]);
            prop_assert_eq!(g == 1.0, all_equal);
        }

        #[test]
        fn percentile_is_an_element_with_enough_below(xs in proptest::collection::vec(0f64..1e3, 1..300), p in 1f64..100.0) {
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            let v = percentile_nearest_rank(&s, p);
            let at_or_below = s.iter().filter(|x| **x <= v).count() as f64;
            prop_assert!(at_or_below >= p / 100.0 * s.len() as f64 - 1e-9);
        }
    }
}
