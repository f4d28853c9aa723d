//! Seeded synthetic measurement data for the analysis benchmarks.

use apiq_core::probe::{classify_outcome, FailureKind, ProbeRecord, Protocol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` probes of one HTTP series at `interval_s`, with a few failures,
/// a heavy latency tail and the occasional missing slot.
pub fn probe_series(n: usize, interval_s: u64, seed: u64) -> Vec<ProbeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n as i64 {
        if rng.gen::<f64>() < 0.002 {
            continue;
        }
        let roll: f64 = rng.gen();
        let outcome = if roll < 0.01 {
            classify_outcome(None, Some(FailureKind::Timeout))
        } else if roll < 0.03 {
            classify_outcome(Some(503), None)
        } else {
            classify_outcome(Some(200), None)
        }
        .expect("valid outcome");
        let base: f64 = rng.gen_range(20.0..60.0);
        let latency_ms = if rng.gen::<f64>() < 0.05 { base * 20.0 } else { base };
        out.push(ProbeRecord {
            timestamp_ms: i * interval_s as i64 * 1000 + 7,
            vantage: "bench".into(),
            endpoint_id: format!("e{}", seed),
            protocol: Protocol::Http,
            latency_ms,
            outcome,
            bytes: 512,
            packets_sent: None,
            packets_lost: None,
        });
    }
    out
}

/// Score series with occasional lasting steps and short spikes.
pub fn score_series(n: usize, seed: u64) -> Vec<(i64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 1.8;
    (0..n as i64)
        .map(|i| {
            let r: f64 = rng.gen();
            if r < 0.02 {
                level *= rng.gen_range(0.9..1.1);
            }
            let x = if r > 0.99 { level * 1.5 } else { level };
            (i * 43_200_000, x)
        })
        .collect()
}
