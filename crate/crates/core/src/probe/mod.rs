//! Single measurements against one endpoint.
//!
//! Every probe yields exactly one [`ProbeRecord`]; network failures are
//! recorded as outcome classes rather than surfaced as errors. The only error
//! a probe can return is a [`ProbeConfigError`], which means the measuring
//! host itself cannot probe (no ICMP privilege, missing ping utility) and must
//! never be counted against the endpoint.

mod echo;
mod http;
mod tls;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use echo::{parse_ping_output, EchoBackend, EchoError, EchoResult, SystemPing, UdpEcho};
pub use http::{http_probe, http_probe_timed, HttpTimings};
pub use tls::{client_config, TlsTrust};

/// Default number of echo requests per ping probe.
pub const DEFAULT_PING_PACKETS: u32 = 5;
/// Default HTTP(S) request timeout.
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Icmp,
    Http,
    Https,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Icmp, Protocol::Http, Protocol::Https];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Icmp => "ICMP",
            Protocol::Http => "HTTP",
            Protocol::Https => "HTTPS",
        }
    }

    pub fn is_http(self) -> bool {
        matches!(self, Protocol::Http | Protocol::Https)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ICMP" => Ok(Protocol::Icmp),
            "HTTP" => Ok(Protocol::Http),
            "HTTPS" => Ok(Protocol::Https),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Client-observable result class of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeClass {
    Success,
    ClientError,
    ServerError,
    NoResponse,
    DnsFailure,
    ConnectFailure,
    TlsFailure,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 7] = [
        OutcomeClass::Success,
        OutcomeClass::ClientError,
        OutcomeClass::ServerError,
        OutcomeClass::NoResponse,
        OutcomeClass::DnsFailure,
        OutcomeClass::ConnectFailure,
        OutcomeClass::TlsFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::Success => "SUCCESS",
            OutcomeClass::ClientError => "CLIENT_ERROR",
            OutcomeClass::ServerError => "SERVER_ERROR",
            OutcomeClass::NoResponse => "NO_RESPONSE",
            OutcomeClass::DnsFailure => "DNS_FAILURE",
            OutcomeClass::ConnectFailure => "CONNECT_FAILURE",
            OutcomeClass::TlsFailure => "TLS_FAILURE",
        }
    }

    /// Whether this class carries an HTTP status code.
    pub fn has_status(self) -> bool {
        matches!(
            self,
            OutcomeClass::Success | OutcomeClass::ClientError | OutcomeClass::ServerError
        )
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutcomeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown outcome class {s:?}"))
    }
}

/// Named failure when no status code was received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    Timeout,
    Disconnect,
    NoEcho,
    Dns,
    Connect,
    Tls,
}

impl FailureKind {
    fn class(self) -> OutcomeClass {
        match self {
            FailureKind::Timeout | FailureKind::Disconnect | FailureKind::NoEcho => {
                OutcomeClass::NoResponse
            }
            FailureKind::Dns => OutcomeClass::DnsFailure,
            FailureKind::Connect => OutcomeClass::ConnectFailure,
            FailureKind::Tls => OutcomeClass::TlsFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub class: OutcomeClass,
    pub status_code: Option<u16>,
    pub detail: String,
}

impl ProbeOutcome {
    pub fn is_success(&self) -> bool {
        self.class == OutcomeClass::Success
    }

    fn failure(kind: FailureKind, detail: impl Into<String>) -> Self {
        ProbeOutcome {
            class: kind.class(),
            status_code: None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("status code {0} is not a final HTTP status (200-599)")]
    MalformedStatus(u16),
    #[error("exactly one of status code and failure kind must be given")]
    Ambiguous,
}

/// Maps a status code or a named failure onto the outcome taxonomy.
///
/// 1xx codes are interim responses; the HTTP client consumes them while
/// waiting for the final response, so a 1xx arriving here is malformed.
pub fn classify_outcome(
    status_code: Option<u16>,
    failure_kind: Option<FailureKind>,
) -> Result<ProbeOutcome, ClassifyError> {
    match (status_code, failure_kind) {
        (Some(code), None) => {
            let class = match code {
                200..=399 => OutcomeClass::Success,
                400..=499 => OutcomeClass::ClientError,
                500..=599 => OutcomeClass::ServerError,
                _ => return Err(ClassifyError::MalformedStatus(code)),
            };
            Ok(ProbeOutcome {
                class,
                status_code: Some(code),
                detail: String::new(),
            })
        }
        (None, Some(kind)) => Ok(ProbeOutcome::failure(kind, "")),
        _ => Err(ClassifyError::Ambiguous),
    }
}

/// Problems with the measuring host that abort a run instead of being
/// recorded against the endpoint.
#[derive(Debug, thiserror::Error)]
pub enum ProbeConfigError {
    #[error("probe protocol {0} is not enabled for endpoint {1}")]
    ProtocolNotEnabled(Protocol, String),
    #[error("echo facility unavailable: {0}")]
    EchoUnavailable(String),
    #[error("invalid probe parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    #[default]
    Get,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndpointError {
    #[error("endpoint id must be non-empty and free of '|', ';', ',' and whitespace: {0:?}")]
    BadId(String),
    #[error("endpoint {0}: url must not carry a scheme: {1:?}")]
    SchemeInUrl(String, String),
    #[error("endpoint {0}: cannot parse host from url {1:?}")]
    BadHost(String, String),
    #[error("endpoint {0}: bad port in url {1:?}")]
    BadPort(String, String),
    #[error("endpoint {0}: protocol set is empty")]
    NoProtocols(String),
    #[error("duplicate endpoint id {0}")]
    DuplicateId(String),
}

/// One benchmark target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub id: String,
    /// `host[:port][/path]`, no scheme.
    pub url: String,
    pub protocols: BTreeSet<Protocol>,
    #[serde(default)]
    pub method: Method,
}

/// Host, optional explicit port, and request path of an endpoint URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlParts {
    pub host: String,
    pub port: Option<u16>,
    pub path: String,
}

impl EndpointSpec {
    pub fn new(
        id: impl Into<String>,
        url: impl Into<String>,
        protocols: impl IntoIterator<Item = Protocol>,
    ) -> Result<Self, EndpointError> {
        let spec = EndpointSpec {
            id: id.into(),
            url: url.into(),
            protocols: protocols.into_iter().collect(),
            method: Method::Get,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if !is_label(&self.id) {
            return Err(EndpointError::BadId(self.id.clone()));
        }
        if self.protocols.is_empty() {
            return Err(EndpointError::NoProtocols(self.id.clone()));
        }
        self.parts().map(|_| ())
    }

    pub fn supports(&self, protocol: Protocol) -> bool {
        self.protocols.contains(&protocol)
    }

    pub fn parts(&self) -> Result<UrlParts, EndpointError> {
        let url = self.url.trim();
        if url.contains("://") {
            return Err(EndpointError::SchemeInUrl(self.id.clone(), self.url.clone()));
        }
        let (authority, path) = match url.find('/') {
            Some(i) => (&url[..i], &url[i..]),
            None => (url, "/"),
        };
        let bad_host = || EndpointError::BadHost(self.id.clone(), self.url.clone());
        let bad_port = || EndpointError::BadPort(self.id.clone(), self.url.clone());
        let (host, port) = if let Some(rest) = authority.strip_prefix('[') {
            let end = rest.find(']').ok_or_else(bad_host)?;
            let host = &rest[..end];
            let tail = &rest[end + 1..];
            let port = match tail.strip_prefix(':') {
                Some(p) => Some(p.parse::<u16>().map_err(|_| bad_port())?),
                None if tail.is_empty() => None,
                None => return Err(bad_host()),
            };
            (host.to_string(), port)
        } else {
            match authority.rsplit_once(':') {
                Some((h, p)) => (h.to_string(), Some(p.parse::<u16>().map_err(|_| bad_port())?)),
                None => (authority.to_string(), None),
            }
        };
        let host_ok = !host.is_empty()
            && host
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | ':'));
        if !host_ok {
            return Err(bad_host());
        }
        Ok(UrlParts {
            host,
            port,
            path: path.to_string(),
        })
    }
}

/// Labels (endpoint ids, vantages) end up in pipe-separated logs and file names.
pub(crate) fn is_label(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| !c.is_whitespace() && !matches!(c, '|' | ';' | ',' | '/' | '\\'))
}

/// A single measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub timestamp_ms: i64,
    pub vantage: String,
    pub endpoint_id: String,
    pub protocol: Protocol,
    pub latency_ms: f64,
    pub outcome: ProbeOutcome,
    pub bytes: u64,
    pub packets_sent: Option<u32>,
    pub packets_lost: Option<u32>,
}

impl ProbeRecord {
    pub fn is_success(&self) -> bool {
        self.outcome.is_success()
    }

    /// Ordering key: (endpoint_id, protocol, vantage, timestamp).
    pub fn sort_key(&self) -> (&str, Protocol, &str, i64) {
        (&self.endpoint_id, self.protocol, &self.vantage, self.timestamp_ms)
    }
}

/// Ping one endpoint with `packet_count` echo requests.
pub fn ping_probe(
    endpoint: &EndpointSpec,
    packet_count: u32,
    vantage: &str,
    backend: &dyn EchoBackend,
) -> Result<ProbeRecord, ProbeConfigError> {
    if !endpoint.supports(Protocol::Icmp) {
        return Err(ProbeConfigError::ProtocolNotEnabled(
            Protocol::Icmp,
            endpoint.id.clone(),
        ));
    }
    if packet_count == 0 {
        return Err(ProbeConfigError::InvalidParameter(
            "packet_count must be at least 1".into(),
        ));
    }
    let timestamp_ms = crate::now_ms();
    let started = std::time::Instant::now();
    let record = |latency_ms: f64, outcome: ProbeOutcome, sent: u32, lost: u32| ProbeRecord {
        timestamp_ms,
        vantage: vantage.to_string(),
        endpoint_id: endpoint.id.clone(),
        protocol: Protocol::Icmp,
        latency_ms,
        outcome,
        bytes: 0,
        packets_sent: Some(sent),
        packets_lost: Some(lost),
    };
    let parts = match endpoint.parts() {
        Ok(p) => p,
        Err(e) => {
            return Ok(record(
                0.0,
                ProbeOutcome::failure(FailureKind::Dns, e.to_string()),
                packet_count,
                packet_count,
            ))
        }
    };
    match backend.echo(&parts.host, parts.port, packet_count) {
        Ok(res) => {
            let sent = res.sent.max(1);
            let lost = res.lost.min(sent);
            if lost < sent {
                let mean = if res.rtts_ms.is_empty() {
                    0.0
                } else {
                    res.rtts_ms.iter().sum::<f64>() / res.rtts_ms.len() as f64
                };
                // Echo records carry no status code, even on success.
                let outcome = ProbeOutcome {
                    class: OutcomeClass::Success,
                    status_code: None,
                    detail: format!("{}/{} answered", sent - lost, sent),
                };
                Ok(record(mean, outcome, sent, lost))
            } else {
                let elapsed = started.elapsed().as_secs_f64() * 1000.0;
                Ok(record(
                    elapsed,
                    ProbeOutcome::failure(FailureKind::NoEcho, "no echo answered"),
                    sent,
                    lost,
                ))
            }
        }
        Err(EchoError::Resolve(msg)) => Ok(record(
            started.elapsed().as_secs_f64() * 1000.0,
            ProbeOutcome::failure(FailureKind::Dns, msg),
            packet_count,
            packet_count,
        )),
        Err(EchoError::Unavailable(msg)) => Err(ProbeConfigError::EchoUnavailable(msg)),
    }
}
