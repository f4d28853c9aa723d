//! What analysis must report for a plan, worked out from the plan alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Behavior, FaultPlan};
use crate::analysis::{AvailabilityReport, Denominators, FailureDistribution};
use crate::probe::{OutcomeClass, Protocol};

/// Suites the probe's TLS client offers, in its order.
const PROBE_CLIENT_SUITES: [&str; 9] = [
    "TLS_AES_256_GCM_SHA384",
    "TLS_AES_128_GCM_SHA256",
    "TLS_CHACHA20_POLY1305_SHA256",
    "ECDHE-ECDSA-AES256-GCM-SHA384",
    "ECDHE-ECDSA-AES128-GCM-SHA256",
    "ECDHE-ECDSA-CHACHA20-POLY1305",
    "ECDHE-RSA-AES256-GCM-SHA384",
    "ECDHE-RSA-AES128-GCM-SHA256",
    "ECDHE-RSA-CHACHA20-POLY1305",
];

/// Of those, the ones the mock can complete with its ECDSA certificate.
const MOCK_COMPLETES: [&str; 6] = [
    "TLS_AES_256_GCM_SHA384",
    "TLS_AES_128_GCM_SHA256",
    "TLS_CHACHA20_POLY1305_SHA256",
    "ECDHE-ECDSA-AES256-GCM-SHA384",
    "ECDHE-ECDSA-AES128-GCM-SHA256",
    "ECDHE-ECDSA-CHACHA20-POLY1305",
];

/// When the probes of one series fire, as offsets from the mock's epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSchedule {
    pub protocol: Protocol,
    pub offsets_ms: Vec<i64>,
    /// Echo packets per ICMP probe.
    pub packet_count: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("plan has packet loss but no seed, so drops are not reproducible")]
    Unseeded,
    #[error("empty probe schedule")]
    NoData,
}

/// Outcome class and status code a probe sees under `behavior`, or `None`
/// where it depends on the loss generator.
pub fn expected_outcome(behavior: Behavior, protocol: Protocol) -> Option<(OutcomeClass, Option<u16>)> {
    let status_class = |c: u16| match c {
        200..=399 => OutcomeClass::Success,
        400..=499 => OutcomeClass::ClientError,
        _ => OutcomeClass::ServerError,
    };
    Some(match (protocol, behavior) {
        (Protocol::Icmp, Behavior::Timeout) => (OutcomeClass::NoResponse, None),
        (Protocol::Icmp, Behavior::PacketLoss(f)) if f > 0.0 => return None,
        (Protocol::Icmp, _) => (OutcomeClass::Success, None),
        (_, Behavior::Ok { status, .. }) | (_, Behavior::Status(status)) => (status_class(status), Some(status)),
        (_, Behavior::Timeout) | (_, Behavior::Reset) => (OutcomeClass::NoResponse, None),
        (Protocol::Https, Behavior::DropTls) => (OutcomeClass::TlsFailure, None),
        (_, Behavior::DropTls) | (_, Behavior::PacketLoss(_)) => (OutcomeClass::Success, Some(200)),
    })
}

/// Whether an HTTPS probe can finish its handshake under the plan's suite
/// preference: the mock picks its first preferred suite that the client
/// offers, TLS 1.3 first.
fn https_handshake_completes(plan: &FaultPlan) -> bool {
    let Some(pref) = &plan.tls_preference else {
        return true;
    };
    let offered = |s: &&String| PROBE_CLIENT_SUITES.contains(&s.as_str());
    let pick = pref
        .iter()
        .filter(offered)
        .find(|s| s.starts_with("TLS_"))
        .or_else(|| pref.iter().filter(offered).find(|s| !s.starts_with("TLS_")));
    pick.is_some_and(|s| MOCK_COMPLETES.contains(&s.as_str()))
}

/// The availability report analysis must produce for a series probed on
/// `schedule` against a mock running `plan`.
///
/// Loss draws are replayed in the order the mock makes them: one per echo
/// datagram arriving inside a loss window, so the schedule must list every
/// echo probe the mock receives.
pub fn expected_report(plan: &FaultPlan, schedule: &ProbeSchedule) -> Result<AvailabilityReport, OracleError> {
    if plan.has_packet_loss() && plan.seed.is_none() {
        return Err(OracleError::Unseeded);
    }
    if schedule.offsets_ms.is_empty() {
        return Err(OracleError::NoData);
    }
    let mut offsets = schedule.offsets_ms.clone();
    offsets.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.unwrap_or(0));
    let tls_ok = https_handshake_completes(plan);

    let mut d = Denominators::default();
    let (mut c4, mut c5, mut none) = (0u64, 0u64, 0u64);
    for &t in &offsets {
        let behavior = plan.behavior_at(t);
        d.records += 1;
        let (class, status) = if schedule.protocol == Protocol::Icmp {
            let n = schedule.packet_count;
            let lost = match behavior {
                Behavior::Timeout => n,
                Behavior::PacketLoss(f) => (0..n).filter(|_| rng.gen::<f64>() < f).count() as u32,
                _ => 0,
            };
            d.packets_sent += u64::from(n);
            d.packets_lost += u64::from(lost);
            if lost < n {
                (OutcomeClass::Success, None)
            } else {
                (OutcomeClass::NoResponse, None)
            }
        } else {
            let expected = expected_outcome(behavior, schedule.protocol).expect("HTTP outcomes are deterministic");
            let handshake_fails = schedule.protocol == Protocol::Https
                && !tls_ok
                && !matches!(behavior, Behavior::Timeout | Behavior::Reset);
            if handshake_fails {
                (OutcomeClass::TlsFailure, None)
            } else {
                expected
            }
        };
        if status.is_some() {
            d.with_status += 1;
        }
        if class == OutcomeClass::Success {
            d.successful += 1;
        } else {
            d.failures += 1;
            match status {
                Some(400..=499) => c4 += 1,
                Some(500..=599) => c5 += 1,
                _ => none += 1,
            }
        }
    }

    let n = d.records as f64;
    let (pingability, accessibility, successability) = match schedule.protocol {
        Protocol::Icmp => (Some(1.0 - d.packets_lost as f64 / d.packets_sent as f64), None, None),
        _ => (None, Some(d.with_status as f64 / n), Some(d.successful as f64 / n)),
    };
    let failure_distribution = (d.failures > 0).then(|| FailureDistribution {
        client_4xx: c4 as f64 / d.failures as f64,
        server_5xx: c5 as f64 / d.failures as f64,
        none: none as f64 / d.failures as f64,
    });
    Ok(AvailabilityReport {
        pingability,
        accessibility,
        successability,
        denominators: d,
        failure_distribution,
    })
}
