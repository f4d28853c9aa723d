use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::wire::{
    build_client_hello, is_tls13_suite, parse_server_hello, suite_code, suite_name, HelloVersion,
    ServerReply,
};
use super::{score_preference, SuiteTable};
use crate::probe::{EndpointSpec, Protocol};
use crate::record::CipherScanRecord;

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Per-handshake budget.
    pub timeout: Duration,
    pub table: SuiteTable,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            timeout: Duration::from_secs(10),
            table: SuiteTable::builtin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enumeration {
    /// Suite names, most preferred first.
    pub suites: Vec<String>,
    /// The server picked the client's first offer instead of its own favourite.
    pub client_order: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScanError {
    #[error("endpoint {0} does not enable HTTPS")]
    NotHttps(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("server accepted none of the offered suites")]
    NoCommonSuite,
    #[error("server selected suite 0x{0:04x} that was not offered")]
    Misbehaving(u16),
}

enum Attempt {
    Selected { suite: u16, version: u16 },
    Refused(String),
}

fn handshake_once(
    addr: &SocketAddr,
    host: &str,
    offer: &[u16],
    version: HelloVersion,
    timeout: Duration,
) -> Result<Attempt, ScanError> {
    let mut stream = TcpStream::connect_timeout(addr, timeout)
        .map_err(|e| ScanError::Unreachable(format!("{addr}: {e}")))?;
    let deadline = Instant::now() + timeout;
    let _ = stream.set_nodelay(true);
    let _ = stream.set_write_timeout(Some(timeout));
    let hello = build_client_hello(offer, version, Some(host));
    if let Err(e) = stream.write_all(&hello) {
        return Ok(Attempt::Refused(format!("write failed: {e}")));
    }
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 4096];
    let reply = loop {
        match parse_server_hello(&buf) {
            Ok(Some(reply)) => break reply,
            Ok(None) => {}
            Err(e) => return Ok(Attempt::Refused(e.to_string())),
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(Attempt::Refused("timed out".into()));
        }
        let _ = stream.set_read_timeout(Some(deadline - now));
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(Attempt::Refused("closed".into())),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Ok(Attempt::Refused(e.to_string())),
        }
    };
    let _ = stream.shutdown(Shutdown::Both);
    match reply {
        ServerReply::Hello(h) => {
            if !offer.contains(&h.suite) {
                return Err(ScanError::Misbehaving(h.suite));
            }
            Ok(Attempt::Selected {
                suite: h.suite,
                version: h.version,
            })
        }
        ServerReply::Stop(stop) => Ok(Attempt::Refused(format!("{stop:?}"))),
    }
}

/// Repeatedly offers the remaining candidates and strikes out whatever the
/// server picks; the pick sequence is the server's preference order.
fn walk(
    addr: &SocketAddr,
    host: &str,
    mut offer: Vec<u16>,
    version: HelloVersion,
    timeout: Duration,
) -> Result<Vec<u16>, ScanError> {
    let mut picked = Vec::new();
    while !offer.is_empty() {
        match handshake_once(addr, host, &offer, version, timeout)? {
            Attempt::Selected { suite, version: v } => {
                if version == HelloVersion::Tls13 && v != 0x0304 {
                    break;
                }
                picked.push(suite);
                offer.retain(|s| *s != suite);
            }
            Attempt::Refused(why) => {
                tracing::debug!(%addr, "preference walk ended: {why}");
                break;
            }
        }
    }
    Ok(picked)
}

/// Reverses the top two preferences; a server honouring its own order still
/// picks its favourite.
fn honours_client_order(
    addr: &SocketAddr,
    host: &str,
    order: &[u16],
    version: HelloVersion,
    timeout: Duration,
) -> Result<bool, ScanError> {
    if order.len() < 2 {
        return Ok(false);
    }
    match handshake_once(addr, host, &[order[1], order[0]], version, timeout)? {
        Attempt::Selected { suite, .. } => Ok(suite == order[1]),
        Attempt::Refused(_) => Ok(false),
    }
}

/// Discovers the server's cipher-suite preference order by iterated handshakes.
///
/// TLS 1.3 suites (if negotiated at all) come first, since a TLS 1.3 capable
/// server selects them ahead of any TLS 1.2 suite.
pub fn enumerate_suites(
    endpoint: &EndpointSpec,
    options: &ScanOptions,
) -> Result<Enumeration, ScanError> {
    if !endpoint.supports(Protocol::Https) {
        return Err(ScanError::NotHttps(endpoint.id.clone()));
    }
    let parts = endpoint
        .parts()
        .map_err(|e| ScanError::Unreachable(e.to_string()))?;
    let port = parts.port.unwrap_or(443);
    let addr = (parts.host.as_str(), port)
        .to_socket_addrs()
        .map_err(|e| ScanError::Unreachable(format!("{}: {e}", parts.host)))?
        .next()
        .ok_or_else(|| ScanError::Unreachable(format!("{}: no addresses", parts.host)))?;

    let candidates: Vec<u16> = options.table.names().filter_map(suite_code).collect();
    let (modern, legacy): (Vec<u16>, Vec<u16>) =
        candidates.into_iter().partition(|c| is_tls13_suite(*c));

    let host = parts.host.as_str();
    let legacy_order = walk(&addr, host, legacy, HelloVersion::Legacy, options.timeout)?;
    let modern_order = walk(&addr, host, modern, HelloVersion::Tls13, options.timeout)?;
    if legacy_order.is_empty() && modern_order.is_empty() {
        return Err(ScanError::NoCommonSuite);
    }
    let client_order = honours_client_order(
        &addr,
        host,
        &legacy_order,
        HelloVersion::Legacy,
        options.timeout,
    )? || honours_client_order(&addr, host, &modern_order, HelloVersion::Tls13, options.timeout)?;

    let suites = modern_order
        .iter()
        .chain(legacy_order.iter())
        .map(|c| suite_name(*c).expect("offered codes come from the registry").to_string())
        .collect();
    Ok(Enumeration {
        suites,
        client_order,
        detail: if client_order {
            "client-order".into()
        } else {
            String::new()
        },
    })
}

/// Enumerates and scores one endpoint; failures become a failed scan record.
pub fn scan_endpoint(
    endpoint: &EndpointSpec,
    vantage: &str,
    options: &ScanOptions,
) -> (CipherScanRecord, Result<Enumeration, ScanError>) {
    let timestamp_ms = crate::now_ms();
    let result = enumerate_suites(endpoint, options);
    let (suites, server_score) = match &result {
        Ok(e) => match score_preference(&options.table, &e.suites) {
            Ok((_, score)) => (e.suites.clone(), Some(score)),
            Err(_) => (Vec::new(), None),
        },
        Err(_) => (Vec::new(), None),
    };
    (
        CipherScanRecord {
            timestamp_ms,
            vantage: vantage.to_string(),
            endpoint_id: endpoint.id.clone(),
            suites,
            server_score,
        },
        result,
    )
}
