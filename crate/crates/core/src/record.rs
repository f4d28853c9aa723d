//! Pipe-separated line formats exchanged between the runner and analysis.
//!
//! Probe record:
//! `timestamp_ms|vantage|endpoint_id|protocol|latency_ms|outcome_class|status_code|bytes|packets_sent|packets_lost|detail`
//!
//! Cipher scan record:
//! `timestamp_ms|vantage|endpoint_id|server_score|suite1;suite2;...`
//!
//! Absent fields are empty strings. A scan that failed is written with an
//! empty score and an empty suite list.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::probe::{OutcomeClass, ProbeOutcome, ProbeRecord, Protocol};

pub const PROBE_FIELDS: usize = 11;
pub const SCAN_FIELDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("bad {field}: {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("record violates outcome invariants: {0}")]
    Inconsistent(String),
}

fn bad(field: &'static str, value: &str) -> RecordError {
    RecordError::BadField {
        field,
        value: value.to_string(),
    }
}

/// Free text must not break the line structure.
fn sanitize(detail: &str) -> String {
    detail
        .chars()
        .map(|c| if c == '|' || c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_probe(r: &ProbeRecord) -> String {
    let mut line = String::with_capacity(96);
    let _ = write!(
        line,
        "{}|{}|{}|{}|{:.3}|{}|{}|{}|{}|{}|{}",
        r.timestamp_ms,
        r.vantage,
        r.endpoint_id,
        r.protocol,
        r.latency_ms,
        r.outcome.class,
        opt(r.outcome.status_code),
        r.bytes,
        opt(r.packets_sent),
        opt(r.packets_lost),
        sanitize(&r.outcome.detail),
    );
    line
}

fn parse_opt<T: std::str::FromStr>(field: &'static str, s: &str) -> Result<Option<T>, RecordError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| bad(field, s))
    }
}

pub fn parse_probe(line: &str) -> Result<ProbeRecord, RecordError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let f: Vec<&str> = line.splitn(PROBE_FIELDS, '|').collect();
    if f.len() != PROBE_FIELDS {
        return Err(RecordError::FieldCount {
            expected: PROBE_FIELDS,
            found: f.len(),
        });
    }
    let timestamp_ms: i64 = f[0].parse().map_err(|_| bad("timestamp_ms", f[0]))?;
    if f[1].is_empty() {
        return Err(bad("vantage", f[1]));
    }
    if f[2].is_empty() {
        return Err(bad("endpoint_id", f[2]));
    }
    let protocol: Protocol = f[3].parse().map_err(|_| bad("protocol", f[3]))?;
    let latency_ms: f64 = f[4].parse().map_err(|_| bad("latency_ms", f[4]))?;
    if !latency_ms.is_finite() || latency_ms < 0.0 {
        return Err(bad("latency_ms", f[4]));
    }
    let class: OutcomeClass = f[5].parse().map_err(|_| bad("outcome_class", f[5]))?;
    let status_code: Option<u16> = parse_opt("status_code", f[6])?;
    let bytes: u64 = f[7].parse().map_err(|_| bad("bytes", f[7]))?;
    let packets_sent: Option<u32> = parse_opt("packets_sent", f[8])?;
    let packets_lost: Option<u32> = parse_opt("packets_lost", f[9])?;

    check_outcome(protocol, class, status_code)?;
    if protocol == Protocol::Icmp {
        match (packets_sent, packets_lost) {
            (Some(s), Some(l)) if s >= 1 && l <= s => {
                if (class == OutcomeClass::Success) != (l < s) && class != OutcomeClass::DnsFailure
                {
                    return Err(RecordError::Inconsistent(format!(
                        "ICMP {class} with {l}/{s} lost"
                    )));
                }
            }
            _ => {
                return Err(RecordError::Inconsistent(
                    "ICMP record needs packets_sent >= 1 and packets_lost <= packets_sent".into(),
                ))
            }
        }
    }
    Ok(ProbeRecord {
        timestamp_ms,
        vantage: f[1].to_string(),
        endpoint_id: f[2].to_string(),
        protocol,
        latency_ms,
        outcome: ProbeOutcome {
            class,
            status_code,
            detail: f[10].to_string(),
        },
        bytes,
        packets_sent,
        packets_lost,
    })
}

fn check_outcome(
    protocol: Protocol,
    class: OutcomeClass,
    status: Option<u16>,
) -> Result<(), RecordError> {
    let ok = match (class, status) {
        (OutcomeClass::Success, None) => protocol == Protocol::Icmp,
        (OutcomeClass::Success, Some(c)) => (200..=399).contains(&c),
        (OutcomeClass::ClientError, Some(c)) => (400..=499).contains(&c),
        (OutcomeClass::ServerError, Some(c)) => (500..=599).contains(&c),
        (c, None) => !c.has_status(),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(RecordError::Inconsistent(format!(
            "{protocol} {class} with status {status:?}"
        )))
    }
}

/// One TLS scan of one endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherScanRecord {
    pub timestamp_ms: i64,
    pub vantage: String,
    pub endpoint_id: String,
    /// Suite names in server preference order; rank 1 first.
    pub suites: Vec<String>,
    /// `None` marks a failed scan.
    pub server_score: Option<f64>,
}

impl CipherScanRecord {
    pub fn is_failure(&self) -> bool {
        self.server_score.is_none()
    }
}

pub fn format_scan(r: &CipherScanRecord) -> String {
    format!(
        "{}|{}|{}|{}|{}",
        r.timestamp_ms,
        r.vantage,
        r.endpoint_id,
        r.server_score.map(|s| format!("{s:.6}")).unwrap_or_default(),
        r.suites.join(";"),
    )
}

pub fn parse_scan(line: &str) -> Result<CipherScanRecord, RecordError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let f: Vec<&str> = line.split('|').collect();
    if f.len() != SCAN_FIELDS {
        return Err(RecordError::FieldCount {
            expected: SCAN_FIELDS,
            found: f.len(),
        });
    }
    let timestamp_ms: i64 = f[0].parse().map_err(|_| bad("timestamp_ms", f[0]))?;
    if f[1].is_empty() {
        return Err(bad("vantage", f[1]));
    }
    if f[2].is_empty() {
        return Err(bad("endpoint_id", f[2]));
    }
    let server_score: Option<f64> = parse_opt("server_score", f[3])?;
    let suites: Vec<String> = if f[4].is_empty() {
        Vec::new()
    } else {
        f[4].split(';').map(str::to_string).collect()
    };
    if server_score.is_some() == suites.is_empty() {
        return Err(RecordError::Inconsistent(
            "a scan has either a score and suites or neither".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = suites.iter().find(|s| !seen.insert(s.as_str())) {
        return Err(RecordError::Inconsistent(format!("duplicate suite {dup}")));
    }
    Ok(CipherScanRecord {
        timestamp_ms,
        vantage: f[1].to_string(),
        endpoint_id: f[2].to_string(),
        suites,
        server_score,
    })
}

/// A line from either log, distinguished by field count.
#[derive(Debug, Clone, PartialEq)]
pub enum LogLine {
    Probe(ProbeRecord),
    Scan(CipherScanRecord),
}

pub fn parse_line(line: &str) -> Result<LogLine, RecordError> {
    let fields = line.split('|').count();
    if fields == SCAN_FIELDS {
        parse_scan(line).map(LogLine::Scan)
    } else {
        parse_probe(line).map(LogLine::Probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ProbeRecord {
        ProbeRecord {
            timestamp_ms: 1_500_000_000_123,
            vantage: "eu-west-1".into(),
            endpoint_id: "api-1".into(),
            protocol: Protocol::Https,
            latency_ms: 123.456,
            outcome: ProbeOutcome {
                class: OutcomeClass::ServerError,
                status_code: Some(503),
                detail: "".into(),
            },
            bytes: 1024,
            packets_sent: None,
            packets_lost: None,
        }
    }

    #[test]
    fn exact_probe_line() {
        assert_eq!(
            format_probe(&sample()),
            "1500000000123|eu-west-1|api-1|HTTPS|123.456|SERVER_ERROR|503|1024|||"
        );
        let icmp = ProbeRecord {
            protocol: Protocol::Icmp,
            latency_ms: 0.5,
            outcome: ProbeOutcome {
                class: OutcomeClass::Success,
                status_code: None,
                detail: "3/5 answered".into(),
            },
            bytes: 0,
            packets_sent: Some(5),
            packets_lost: Some(2),
            ..sample()
        };
        let line = format_probe(&icmp);
        assert_eq!(
            line,
            "1500000000123|eu-west-1|api-1|ICMP|0.500|SUCCESS||0|5|2|3/5 answered"
        );
        assert_eq!(parse_probe(&line).unwrap(), icmp);
    }

    #[test]
    fn detail_cannot_break_lines() {
        let mut r = sample();
        r.outcome.detail = "a|b\nc".into();
        let line = format_probe(&r);
        assert_eq!(line.matches('|').count(), PROBE_FIELDS - 1);
        assert_eq!(parse_probe(&line).unwrap().outcome.detail, "a b c");
    }

    #[test]
    fn rejects_inconsistent_outcomes() {
        let line = "1|v|e|HTTP|1.000|SUCCESS|503|0|||";
        assert!(matches!(parse_probe(line), Err(RecordError::Inconsistent(_))));
        let line = "1|v|e|HTTP|1.000|NO_RESPONSE|200|0|||";
        assert!(matches!(parse_probe(line), Err(RecordError::Inconsistent(_))));
        let line = "1|v|e|ICMP|1.000|SUCCESS||0|5|6|";
        assert!(parse_probe(line).is_err());
        let line = "1|v|e|ICMP|1.000|SUCCESS||0|5|5|";
        assert!(parse_probe(line).is_err());
        assert!(matches!(
            parse_probe("1|v|e|HTTP"),
            Err(RecordError::FieldCount { .. })
        ));
    }

    #[test]
    fn scan_lines() {
        let r = CipherScanRecord {
            timestamp_ms: 7,
            vantage: "v".into(),
            endpoint_id: "e".into(),
            suites: vec!["ECDHE-RSA-AES256-SHA384".into(), "RC4-SHA".into()],
            server_score: Some(0.6),
        };
        let line = format_scan(&r);
        assert_eq!(line, "7|v|e|0.600000|ECDHE-RSA-AES256-SHA384;RC4-SHA");
        assert_eq!(parse_scan(&line).unwrap(), r);
        let failed = parse_scan("8|v|e||").unwrap();
        assert!(failed.is_failure());
        assert!(parse_scan("8|v|e|1.0|").is_err());
        assert!(parse_scan("8|v|e|1.0|A;A").is_err());
        assert!(matches!(parse_line("8|v|e||").unwrap(), LogLine::Scan(_)));
    }

    fn arb_record() -> impl Strategy<Value = ProbeRecord> {
        (
            0i64..4_000_000_000_000,
            prop::sample::select(vec![Protocol::Http, Protocol::Https, Protocol::Icmp]),
            0u32..10_000_000,
            prop::option::of(200u16..600),
            0u64..1 << 40,
            1u32..10,
            "[a-z ]{0,12}",
        )
            .prop_map(|(ts, proto, lat, status, bytes, sent, detail)| {
                let (outcome, sent_lost, bytes) = if proto == Protocol::Icmp {
                    let lost = (lat % (sent + 1)).min(sent);
                    let class = if lost < sent {
                        OutcomeClass::Success
                    } else {
                        OutcomeClass::NoResponse
                    };
                    (
                        ProbeOutcome {
                            class,
                            status_code: None,
                            detail: detail.clone(),
                        },
                        (Some(sent), Some(lost)),
                        0,
                    )
                } else {
                    let outcome = match status {
                        Some(c) => crate::probe::classify_outcome(Some(c), None).unwrap(),
                        None => crate::probe::classify_outcome(
                            None,
                            Some(crate::probe::FailureKind::Timeout),
                        )
                        .unwrap(),
                    };
                    (
                        ProbeOutcome {
                            detail: detail.clone(),
                            ..outcome
                        },
                        (None, None),
                        bytes,
                    )
                };
                ProbeRecord {
                    timestamp_ms: ts,
                    vantage: "v-1".into(),
                    endpoint_id: "e.2".into(),
                    protocol: proto,
                    latency_ms: lat as f64 / 1000.0,
                    outcome,
                    bytes,
                    packets_sent: sent_lost.0,
                    packets_lost: sent_lost.1,
                }
            })
    }

    proptest! {
        #[test]
        fn probe_lines_round_trip_bit_exact(r in arb_record()) {
            let line = format_probe(&r);
            let back = parse_probe(&line).unwrap();
            prop_assert_eq!(format_probe(&back), line);
            prop_assert_eq!(back, r);
        }
    }
}
