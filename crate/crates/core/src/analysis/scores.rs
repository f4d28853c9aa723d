use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{latency_stats, AnalysisError, LatencyStats, Series, SeriesKey, DEFAULT_BIN_WIDTH_MS};
use crate::record::CipherScanRecord;
use crate::tlsscan::{classify_suite, SuiteTable};

pub const DEFAULT_MIN_REL_CHANGE: f64 = 0.01;
pub const DEFAULT_PERSISTENCE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub timestamp_ms: i64,
    pub old_score: f64,
    pub new_score: f64,
    /// `None` when the old score was zero.
    pub relative_change: Option<f64>,
    pub zero_base: bool,
}

fn within(x: f64, target: f64, min_rel: f64) -> bool {
    if target == 0.0 {
        x == 0.0
    } else {
        (x - target).abs() / target.abs() < min_rel
    }
}

/// Points where the score moves by at least `min_rel_change` relative to the
/// previous value and then holds within that tolerance of the new value for
/// the next `persistence` measurements.
///
/// A move back to the level held before a transient excursion (a spike that
/// failed to persist) is a return, not a change, and is not reported.
pub fn lasting_changes(
    scores: &[(i64, f64)],
    min_rel_change: f64,
    persistence: usize,
) -> Result<Vec<ChangeEvent>, AnalysisError> {
    if !(min_rel_change > 0.0) {
        return Err(AnalysisError::InvalidParameter("min_rel_change must be positive".into()));
    }
    if scores.len() <= persistence {
        return Err(AnalysisError::NoData(format!(
            "need more than {persistence} scores, have {}",
            scores.len()
        )));
    }
    let mut events = Vec::new();
    // Last score that was itself steady (the first one, or close to its predecessor).
    let mut level = scores[0].1;
    for i in 1..scores.len() {
        let (old, new) = (scores[i - 1].1, scores[i].1);
        if i >= 2 && within(old, scores[i - 2].1, min_rel_change) {
            level = old;
        }
        let (changed, rel) = if old == 0.0 {
            (new != 0.0, None)
        } else {
            let rel = (new - old) / old.abs();
            (rel.abs() >= min_rel_change, Some(rel))
        };
        if !changed || i + persistence >= scores.len() || within(new, level, min_rel_change) {
            continue;
        }
        if scores[i + 1..=i + persistence]
            .iter()
            .all(|(_, x)| within(*x, new, min_rel_change))
        {
            events.push(ChangeEvent {
                timestamp_ms: scores[i].0,
                old_score: old,
                new_score: new,
                relative_change: rel,
                zero_base: old == 0.0,
            });
        }
    }
    Ok(events)
}

/// Time-ordered successful server scores per (endpoint, vantage).
pub fn score_series(scans: &[CipherScanRecord]) -> BTreeMap<(String, String), Vec<(i64, f64)>> {
    let mut out: BTreeMap<(String, String), Vec<(i64, f64)>> = BTreeMap::new();
    for s in scans {
        if let Some(score) = s.server_score {
            out.entry((s.endpoint_id.clone(), s.vantage.clone()))
                .or_default()
                .push((s.timestamp_ms, score));
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|p| p.0);
    }
    out
}

/// Per-run inputs to [`compare_runs`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub latency: BTreeMap<SeriesKey, LatencyStats>,
    /// Mean server score per (endpoint, vantage).
    pub scores: BTreeMap<(String, String), f64>,
}

impl RunStats {
    pub fn from_data(series: &[Series], scans: &[CipherScanRecord]) -> Self {
        let latency = series
            .iter()
            .filter_map(|s| {
                latency_stats(s, DEFAULT_BIN_WIDTH_MS)
                    .ok()
                    .map(|l| (s.key.clone(), l))
            })
            .collect();
        let scores = score_series(scans)
            .into_iter()
            .map(|(k, v)| (k, v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64))
            .collect();
        RunStats { latency, scores }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDelta {
    pub key: SeriesKey,
    pub p90_a: f64,
    pub p90_b: f64,
    pub p90_rel: f64,
    pub stddev_a: f64,
    pub stddev_b: f64,
    /// `None` when run A had zero spread.
    pub stddev_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub deltas: Vec<KeyDelta>,
    pub p90_increases: usize,
    pub p90_decreases: usize,
    pub p90_flat: usize,
    /// In run A only.
    pub discontinued: Vec<SeriesKey>,
    /// In run B only.
    pub new: Vec<SeriesKey>,
    /// `(endpoint, vantage, score_a, score_b)` for keys scanned in both runs.
    pub score_changes: Vec<(String, String, f64, f64)>,
    pub score_median_abs_rel_change: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

pub fn compare_runs(a: &RunStats, b: &RunStats) -> RunComparison {
    let mut deltas = Vec::new();
    let mut discontinued = Vec::new();
    for (key, la) in &a.latency {
        let Some(lb) = b.latency.get(key) else {
            discontinued.push(key.clone());
            continue;
        };
        deltas.push(KeyDelta {
            key: key.clone(),
            p90_a: la.p90,
            p90_b: lb.p90,
            p90_rel: (lb.p90 - la.p90) / la.p90,
            stddev_a: la.stddev,
            stddev_b: lb.stddev,
            stddev_rel: (la.stddev != 0.0).then(|| (lb.stddev - la.stddev) / la.stddev),
        });
    }
    let new = b
        .latency
        .keys()
        .filter(|k| !a.latency.contains_key(*k))
        .cloned()
        .collect();
    let p90_increases = deltas.iter().filter(|d| d.p90_rel > 0.0).count();
    let p90_decreases = deltas.iter().filter(|d| d.p90_rel < 0.0).count();
    let mut score_changes = Vec::new();
    let mut rels = Vec::new();
    for ((ep, v), sa) in &a.scores {
        if let Some(sb) = b.scores.get(&(ep.clone(), v.clone())) {
            score_changes.push((ep.clone(), v.clone(), *sa, *sb));
            if *sa != 0.0 {
                rels.push(((sb - sa) / sa).abs());
            }
        }
    }
    RunComparison {
        p90_flat: deltas.len() - p90_increases - p90_decreases,
        deltas,
        p90_increases,
        p90_decreases,
        discontinued,
        new,
        score_changes,
        score_median_abs_rel_change: median(rels),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteCensus {
    pub only_in_a: BTreeSet<String>,
    pub only_in_b: BTreeSet<String>,
    /// (scan, suite) occurrences of weak suites.
    pub weak_occurrences_a: u64,
    pub weak_occurrences_b: u64,
    /// Names missing from the classification table.
    pub unknown: BTreeSet<String>,
}

pub fn suite_census(a: &[CipherScanRecord], b: &[CipherScanRecord], table: &SuiteTable) -> SuiteCensus {
    let mut census = SuiteCensus::default();
    let mut count = |scans: &[CipherScanRecord]| -> (BTreeSet<String>, u64) {
        let mut names = BTreeSet::new();
        let mut weak = 0;
        for scan in scans {
            for s in &scan.suites {
                names.insert(s.clone());
                match classify_suite(table, s) {
                    Ok(info) if info.base_score() == -1.0 => weak += 1,
                    Ok(_) => {}
                    Err(_) => {
                        census.unknown.insert(s.clone());
                    }
                }
            }
        }
        (names, weak)
    };
    let (na, wa) = count(a);
    let (nb, wb) = count(b);
    census.only_in_a = na.difference(&nb).cloned().collect();
    census.only_in_b = nb.difference(&na).cloned().collect();
    census.weak_occurrences_a = wa;
    census.weak_occurrences_b = wb;
    census
}
