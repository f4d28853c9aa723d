//! Fixed-rate firing grid: series `s` fires at `epoch + phase(s) + k * interval`.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::probe::Protocol;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeriesId {
    pub endpoint_id: String,
    pub protocol: Protocol,
}

/// Stable hash of a series label reduced into `[0, interval_ms)`.
pub fn hashed_phase_ms(label: &str, interval_ms: u64) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head) % interval_ms
}

/// Phase of every configured series. With staggering on, phases are distinct:
/// a colliding series moves to the next free millisecond.
pub fn series_phases(config: &RunConfig) -> Vec<(SeriesId, u64)> {
    let interval_ms = config.probe_interval_s * 1000;
    let mut taken = HashSet::new();
    let mut out = Vec::new();
    for e in &config.endpoints {
        for &p in &e.protocols {
            let phase = if config.stagger {
                let mut ph = hashed_phase_ms(&format!("{}{}", e.id, p), interval_ms);
                while !taken.insert(ph) {
                    ph = (ph + 1) % interval_ms;
                }
                ph
            } else {
                0
            };
            out.push((
                SeriesId {
                    endpoint_id: e.id.clone(),
                    protocol: p,
                },
                phase,
            ));
        }
    }
    out
}

/// Phase of an endpoint's cipher scans within the scan interval.
pub fn scan_phase_ms(endpoint_id: &str, scan_interval_s: u64, stagger: bool) -> u64 {
    if stagger {
        hashed_phase_ms(&format!("{endpoint_id}SCAN"), scan_interval_s * 1000)
    } else {
        0
    }
}

/// The first grid point at or after `now_ms`.
pub fn next_fire_ms(now_ms: i64, epoch_ms: i64, phase_ms: u64, interval_ms: u64) -> i64 {
    let base = epoch_ms + phase_ms as i64;
    let interval = interval_ms as i64;
    if now_ms <= base {
        return base;
    }
    let k = (now_ms - base + interval - 1) / interval;
    base + k * interval
}
