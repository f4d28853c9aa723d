//! One-shot HTTP/1.1 GET over a fresh connection.
//!
//! Hand-rolled on `TcpStream` + rustls so that each failure stage (resolve,
//! connect, handshake, response) maps onto its own outcome class, and so the
//! request never reuses connections, follows redirects, or hits a cache.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rustls::pki_types::ServerName;
use rustls::{ClientConfig, ClientConnection, StreamOwned};

use super::{
    classify_outcome, EndpointSpec, FailureKind, ProbeConfigError, ProbeOutcome, ProbeRecord,
    Protocol,
};

const MAX_HEAD_BYTES: usize = 64 * 1024;
const MAX_HEADERS: usize = 96;

/// Cumulative milestones of one HTTP(S) probe, in milliseconds from start.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HttpTimings {
    pub resolved_ms: Option<f64>,
    pub connected_ms: Option<f64>,
    pub handshake_ms: Option<f64>,
    pub total_ms: f64,
}

pub fn http_probe(
    endpoint: &EndpointSpec,
    scheme: Protocol,
    timeout_ms: u64,
    vantage: &str,
    tls: &Arc<ClientConfig>,
) -> Result<ProbeRecord, ProbeConfigError> {
    http_probe_timed(endpoint, scheme, timeout_ms, vantage, tls).map(|(r, _)| r)
}

pub fn http_probe_timed(
    endpoint: &EndpointSpec,
    scheme: Protocol,
    timeout_ms: u64,
    vantage: &str,
    tls: &Arc<ClientConfig>,
) -> Result<(ProbeRecord, HttpTimings), ProbeConfigError> {
    if !scheme.is_http() || !endpoint.supports(scheme) {
        return Err(ProbeConfigError::ProtocolNotEnabled(scheme, endpoint.id.clone()));
    }
    if timeout_ms == 0 {
        return Err(ProbeConfigError::InvalidParameter(
            "timeout_ms must be positive".into(),
        ));
    }
    let timestamp_ms = crate::now_ms();
    let start = Instant::now();
    let deadline = start + Duration::from_millis(timeout_ms);
    let mut timings = HttpTimings::default();
    let (outcome, bytes) = match exchange(endpoint, scheme, tls, start, deadline, &mut timings) {
        Ok(done) => done,
        Err(failure) => (failure, 0),
    };
    timings.total_ms = ms_since(start);
    let record = ProbeRecord {
        timestamp_ms,
        vantage: vantage.to_string(),
        endpoint_id: endpoint.id.clone(),
        protocol: scheme,
        latency_ms: timings.total_ms,
        outcome,
        bytes,
        packets_sent: None,
        packets_lost: None,
    };
    Ok((record, timings))
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

fn fail(kind: FailureKind, detail: impl Into<String>) -> ProbeOutcome {
    ProbeOutcome::failure(kind, detail)
}

enum Conn {
    Plain(TcpStream),
    Tls(Box<StreamOwned<ClientConnection, TcpStream>>),
}

impl Conn {
    fn tcp(&self) -> &TcpStream {
        match self {
            Conn::Plain(s) => s,
            Conn::Tls(s) => &s.sock,
        }
    }
}

impl Read for Conn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Conn::Plain(s) => s.read(buf),
            Conn::Tls(s) => match s.read(buf) {
                // Servers commonly close without close_notify; framing below
                // decides whether the body was complete.
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(0),
                other => other,
            },
        }
    }
}

impl Write for Conn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Conn::Plain(s) => s.write(buf),
            Conn::Tls(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Conn::Plain(s) => s.flush(),
            Conn::Tls(s) => s.flush(),
        }
    }
}

enum ReadFail {
    Timeout,
    Io(io::Error),
}

fn remaining(deadline: Instant) -> Option<Duration> {
    let now = Instant::now();
    (now < deadline).then(|| deadline - now)
}

/// One read honouring the overall deadline; `Ok(0)` is end of stream.
fn read_some(conn: &mut Conn, buf: &mut [u8], deadline: Instant) -> Result<usize, ReadFail> {
    loop {
        let Some(left) = remaining(deadline) else {
            return Err(ReadFail::Timeout);
        };
        let _ = conn.tcp().set_read_timeout(Some(left.max(Duration::from_millis(1))));
        match conn.read(buf) {
            Ok(n) => return Ok(n),
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) =>
            {
                continue
            }
            Err(e) => return Err(ReadFail::Io(e)),
        }
    }
}

fn exchange(
    endpoint: &EndpointSpec,
    scheme: Protocol,
    tls: &Arc<ClientConfig>,
    start: Instant,
    deadline: Instant,
    timings: &mut HttpTimings,
) -> Result<(ProbeOutcome, u64), ProbeOutcome> {
    let parts = endpoint
        .parts()
        .map_err(|e| fail(FailureKind::Dns, e.to_string()))?;
    let port = parts.port.unwrap_or(match scheme {
        Protocol::Https => 443,
        _ => 80,
    });

    let addrs: Vec<SocketAddr> = (parts.host.as_str(), port)
        .to_socket_addrs()
        .map_err(|e| fail(FailureKind::Dns, format!("{}: {e}", parts.host)))?
        .collect();
    if addrs.is_empty() {
        return Err(fail(FailureKind::Dns, format!("{}: no addresses", parts.host)));
    }
    timings.resolved_ms = Some(ms_since(start));

    let mut last_err = None;
    let mut stream = None;
    for addr in &addrs {
        let Some(left) = remaining(deadline) else {
            break;
        };
        match TcpStream::connect_timeout(addr, left) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let stream = stream.ok_or_else(|| {
        let why = last_err.map_or_else(|| "timed out".to_string(), |e| e.to_string());
        fail(FailureKind::Connect, why)
    })?;
    let _ = stream.set_nodelay(true);
    timings.connected_ms = Some(ms_since(start));

    let mut conn = match scheme {
        Protocol::Https => {
            let name = ServerName::try_from(parts.host.clone())
                .map_err(|e| fail(FailureKind::Tls, format!("bad server name: {e}")))?;
            let client = ClientConnection::new(Arc::clone(tls), name)
                .map_err(|e| fail(FailureKind::Tls, e.to_string()))?;
            let mut tls_stream = StreamOwned::new(client, stream);
            handshake(&mut tls_stream, deadline)?;
            timings.handshake_ms = Some(ms_since(start));
            Conn::Tls(Box::new(tls_stream))
        }
        _ => Conn::Plain(stream),
    };

    let host_header = match parts.port {
        Some(p) if parts.host.contains(':') => format!("[{}]:{p}", parts.host),
        Some(p) => format!("{}:{p}", parts.host),
        None => parts.host.clone(),
    };
    let request = format!(
        "GET {} HTTP/1.1\r\nHost: {}\r\nUser-Agent: apiq/{}\r\nAccept: */*\r\n\
         Cache-Control: no-cache, no-store\r\nPragma: no-cache\r\nConnection: close\r\n\r\n",
        parts.path,
        host_header,
        env!("CARGO_PKG_VERSION")
    );
    let _ = conn
        .tcp()
        .set_write_timeout(remaining(deadline).or(Some(Duration::from_millis(1))));
    if let Err(e) = conn.write_all(request.as_bytes()).and_then(|_| conn.flush()) {
        return Err(fail(FailureKind::Disconnect, format!("request write failed: {e}")));
    }

    read_response(&mut conn, deadline)
}

fn handshake(
    tls: &mut StreamOwned<ClientConnection, TcpStream>,
    deadline: Instant,
) -> Result<(), ProbeOutcome> {
    while tls.conn.is_handshaking() {
        let Some(left) = remaining(deadline) else {
            return Err(fail(FailureKind::Timeout, "timed out during TLS handshake"));
        };
        let _ = tls.sock.set_read_timeout(Some(left.max(Duration::from_millis(1))));
        let _ = tls.sock.set_write_timeout(Some(left.max(Duration::from_millis(1))));
        match tls.conn.complete_io(&mut tls.sock) {
            Ok((0, 0)) if tls.conn.is_handshaking() && tls.conn.wants_read() => {
                return Err(fail(FailureKind::Tls, "connection closed during TLS handshake"))
            }
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) => {}
            Err(e) => {
                let is_tls = e
                    .get_ref()
                    .is_some_and(|inner| inner.is::<rustls::Error>());
                return Err(if is_tls || e.kind() == ErrorKind::UnexpectedEof {
                    fail(FailureKind::Tls, format!("TLS handshake failed: {e}"))
                } else {
                    fail(FailureKind::Disconnect, format!("TLS handshake aborted: {e}"))
                });
            }
        }
    }
    Ok(())
}

struct Head {
    status: u16,
    content_length: Option<u64>,
    chunked: bool,
    len: usize,
}

fn parse_head(buf: &[u8]) -> Result<Option<Head>, String> {
    let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut headers);
    match resp.parse(buf) {
        Ok(httparse::Status::Complete(len)) => {
            let status = resp.code.ok_or("missing status code")?;
            let mut content_length = None;
            let mut chunked = false;
            for h in resp.headers.iter() {
                if h.name.eq_ignore_ascii_case("content-length") {
                    let v = std::str::from_utf8(h.value).map_err(|_| "bad content-length")?;
                    content_length =
                        Some(v.trim().parse::<u64>().map_err(|_| "bad content-length")?);
                } else if h.name.eq_ignore_ascii_case("transfer-encoding") {
                    chunked = String::from_utf8_lossy(h.value)
                        .to_ascii_lowercase()
                        .contains("chunked");
                }
            }
            Ok(Some(Head {
                status,
                content_length,
                chunked,
                len,
            }))
        }
        Ok(httparse::Status::Partial) => Ok(None),
        Err(e) => Err(format!("malformed response head: {e}")),
    }
}

struct Buffered<'a> {
    conn: &'a mut Conn,
    buf: Vec<u8>,
    pos: usize,
    deadline: Instant,
    eof: bool,
}

enum BodyFail {
    Timeout,
    Eof,
    Io(io::Error),
    Malformed(String),
}

impl Buffered<'_> {
    fn available(&self) -> &[u8] {
        &self.buf[self.pos..]
    }

    /// Pulls more bytes; `Ok(false)` at end of stream.
    fn fill(&mut self) -> Result<bool, BodyFail> {
        if self.eof {
            return Ok(false);
        }
        if self.pos > 0 && self.pos == self.buf.len() {
            self.buf.clear();
            self.pos = 0;
        }
        let mut chunk = [0u8; 16 * 1024];
        match read_some(self.conn, &mut chunk, self.deadline) {
            Ok(0) => {
                self.eof = true;
                Ok(false)
            }
            Ok(n) => {
                self.buf.extend_from_slice(&chunk[..n]);
                Ok(true)
            }
            Err(ReadFail::Timeout) => Err(BodyFail::Timeout),
            Err(ReadFail::Io(e)) => Err(BodyFail::Io(e)),
        }
    }

    fn need(&mut self, n: usize) -> Result<(), BodyFail> {
        while self.available().len() < n {
            if !self.fill()? {
                return Err(BodyFail::Eof);
            }
        }
        Ok(())
    }

    fn line(&mut self) -> Result<Vec<u8>, BodyFail> {
        loop {
            if let Some(i) = self.available().windows(2).position(|w| w == b"\r\n") {
                let line = self.available()[..i].to_vec();
                self.pos += i + 2;
                return Ok(line);
            }
            if self.available().len() > MAX_HEAD_BYTES {
                return Err(BodyFail::Malformed("chunk line too long".into()));
            }
            if !self.fill()? {
                return Err(BodyFail::Eof);
            }
        }
    }

    fn skip(&mut self, mut n: u64) -> Result<(), BodyFail> {
        while n > 0 {
            if self.available().is_empty() && !self.fill()? {
                return Err(BodyFail::Eof);
            }
            let take = (self.available().len() as u64).min(n) as usize;
            self.pos += take;
            n -= take as u64;
        }
        Ok(())
    }

    fn drain_to_eof(&mut self) -> Result<u64, BodyFail> {
        let mut total = 0u64;
        loop {
            total += self.available().len() as u64;
            self.pos = self.buf.len();
            if !self.fill()? {
                return Ok(total);
            }
        }
    }

    fn chunked(&mut self) -> Result<u64, BodyFail> {
        let mut total = 0u64;
        loop {
            let line = self.line()?;
            let text = String::from_utf8_lossy(&line);
            let size_str = text.split(';').next().unwrap_or("").trim();
            let size = u64::from_str_radix(size_str, 16)
                .map_err(|_| BodyFail::Malformed(format!("bad chunk size {size_str:?}")))?;
            if size == 0 {
                // trailers end with an empty line
                while !self.line()?.is_empty() {}
                return Ok(total);
            }
            self.skip(size)?;
            self.need(2)?;
            if &self.available()[..2] != b"\r\n" {
                return Err(BodyFail::Malformed("missing chunk terminator".into()));
            }
            self.pos += 2;
            total += size;
        }
    }
}

fn read_response(conn: &mut Conn, deadline: Instant) -> Result<(ProbeOutcome, u64), ProbeOutcome> {
    let mut rd = Buffered {
        conn,
        buf: Vec::with_capacity(4096),
        pos: 0,
        deadline,
        eof: false,
    };
    let head = loop {
        match parse_head(rd.available()) {
            Ok(Some(head)) if (100..200).contains(&head.status) && head.status != 101 => {
                rd.pos += head.len;
            }
            Ok(Some(head)) => break head,
            Ok(None) => {
                if rd.available().len() > MAX_HEAD_BYTES {
                    return Err(fail(FailureKind::Disconnect, "response head too large"));
                }
                match rd.fill() {
                    Ok(true) => {}
                    Ok(false) => {
                        return Err(fail(
                            FailureKind::Disconnect,
                            "connection closed before a response",
                        ))
                    }
                    Err(BodyFail::Timeout) => {
                        return Err(fail(FailureKind::Timeout, "timed out waiting for response"))
                    }
                    Err(BodyFail::Io(e)) => {
                        return Err(fail(FailureKind::Disconnect, format!("read failed: {e}")))
                    }
                    Err(BodyFail::Malformed(m)) => return Err(fail(FailureKind::Disconnect, m)),
                    Err(BodyFail::Eof) => unreachable!("fill reports eof as Ok(false)"),
                }
            }
            Err(m) => return Err(fail(FailureKind::Disconnect, m)),
        }
    };
    rd.pos += head.len;

    let body = if matches!(head.status, 204 | 304) {
        Ok(0)
    } else if head.chunked {
        rd.chunked()
    } else if let Some(n) = head.content_length {
        rd.skip(n).map(|_| n)
    } else {
        rd.drain_to_eof()
    };
    let status = head.status;
    match body {
        Ok(bytes) => {
            let outcome = classify_outcome(Some(status), None).map_err(|e| {
                fail(FailureKind::Disconnect, format!("unusable response: {e}"))
            })?;
            Ok((outcome, bytes))
        }
        Err(BodyFail::Timeout) => Err(fail(
            FailureKind::Timeout,
            format!("status {status}, timed out reading body"),
        )),
        Err(BodyFail::Eof) => Err(fail(
            FailureKind::Disconnect,
            format!("status {status}, connection closed mid-body"),
        )),
        Err(BodyFail::Io(e)) => Err(fail(
            FailureKind::Disconnect,
            format!("status {status}, body read failed: {e}"),
        )),
        Err(BodyFail::Malformed(m)) => Err(fail(
            FailureKind::Disconnect,
            format!("status {status}, {m}"),
        )),
    }
}
