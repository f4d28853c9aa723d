use std::fs::OpenOptions;
use std::io::{self, Cursor, ErrorKind, Read, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tls::{Choice, MockTls};
use super::{Behavior, FaultPlan};
use crate::httpio::{read_request_head, write_response};
use crate::probe::TlsTrust;
use crate::tlsscan::{parse_client_hello, server_hello_bytes, HANDSHAKE_FAILURE_ALERT};

const TLS_HANDSHAKE_RECORD: u8 = 0x16;
const POLL: Duration = Duration::from_millis(100);
const IDLE_LIMIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct MockOptions {
    /// Wall-clock instant that plan offsets count from; defaults to start-up.
    pub epoch_ms: Option<i64>,
    pub bind: IpAddr,
    /// Upper bound on how long a TIMEOUT window holds a connection open.
    pub stall_limit: Duration,
    /// Also append ground truth to this file, one `at_ms|channel|behavior|note` line per event.
    pub ground_truth_path: Option<PathBuf>,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            epoch_ms: None,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            stall_limit: Duration::from_secs(600),
            ground_truth_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Http,
    Https,
    Echo,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Http => "HTTP",
            Channel::Https => "HTTPS",
            Channel::Echo => "ECHO",
        }
    }
}

/// What the mock actually did with one connection or datagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub at_ms: i64,
    pub channel: Channel,
    pub behavior: Behavior,
    pub note: String,
}

struct Shared {
    plan: FaultPlan,
    epoch_ms: i64,
    tls: MockTls,
    stop: AtomicBool,
    stall_limit: Duration,
    truth: Mutex<Vec<GroundTruth>>,
    truth_file: Option<Mutex<std::fs::File>>,
}

impl Shared {
    fn behavior_now(&self) -> (i64, Behavior) {
        let now = crate::now_ms();
        (now, self.plan.behavior_at(now - self.epoch_ms))
    }

    fn log(&self, at_ms: i64, channel: Channel, behavior: Behavior, note: impl Into<String>) {
        let entry = GroundTruth {
            at_ms,
            channel,
            behavior,
            note: note.into(),
        };
        if let Some(file) = &self.truth_file {
            let line = format!(
                "{}|{}|{}|{}\n",
                entry.at_ms,
                entry.channel.as_str(),
                entry.behavior,
                entry.note
            );
            if let Ok(mut f) = file.lock() {
                let _ = f.write_all(line.as_bytes());
            }
        }
        self.truth.lock().expect("ground truth lock").push(entry);
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

/// A running mock endpoint. Dropping it shuts it down.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn epoch_ms(&self) -> i64 {
        self.shared.epoch_ms
    }

    /// PEM of the self-signed certificate presented on HTTPS.
    pub fn cert_pem(&self) -> &str {
        &self.shared.tls.cert_pem
    }

    /// Trust settings under which probes accept this mock's certificate.
    pub fn trust(&self) -> TlsTrust {
        TlsTrust::with_extra_root_pem(self.cert_pem().as_bytes().to_vec())
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.shared.truth.lock().expect("ground truth lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblocks accept().
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn bind_pair(ip: IpAddr, port: u16) -> io::Result<(TcpListener, UdpSocket)> {
    let attempts = if port == 0 { 20 } else { 1 };
    let mut last = None;
    for _ in 0..attempts {
        let tcp = TcpListener::bind((ip, port))?;
        let actual = tcp.local_addr()?.port();
        match UdpSocket::bind((ip, actual)) {
            Ok(udp) => return Ok((tcp, udp)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| io::Error::other("cannot bind echo socket")))
}

/// Starts a mock endpoint on `port` (0 picks a free one) serving HTTP and
/// HTTPS on TCP and the echo substitute on UDP.
pub fn serve(plan: FaultPlan, port: u16, options: MockOptions) -> io::Result<MockServer> {
    plan.validate()
        .map_err(|e| io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;
    let tls = MockTls::new(plan.tls_preference.as_deref())
        .map_err(|e| io::Error::new(ErrorKind::InvalidInput, e))?;
    let (listener, udp) = bind_pair(options.bind, port)?;
    let addr = listener.local_addr()?;
    let truth_file = match &options.ground_truth_path {
        Some(p) => Some(Mutex::new(
            OpenOptions::new().create(true).append(true).open(p)?,
        )),
        None => None,
    };
    let rng = match plan.seed {
        Some(seed) => ChaCha8Rng::seed_from_u64(seed),
        None => ChaCha8Rng::from_entropy(),
    };
    let shared = Arc::new(Shared {
        plan,
        epoch_ms: options.epoch_ms.unwrap_or_else(crate::now_ms),
        tls,
        stop: AtomicBool::new(false),
        stall_limit: options.stall_limit,
        truth: Mutex::new(Vec::new()),
        truth_file,
    });

    let mut threads = Vec::new();
    {
        let shared = Arc::clone(&shared);
        threads.push(
            thread::Builder::new()
                .name("mock-accept".into())
                .spawn(move || accept_loop(listener, shared))?,
        );
    }
    {
        let shared = Arc::clone(&shared);
        threads.push(
            thread::Builder::new()
                .name("mock-echo".into())
                .spawn(move || echo_loop(udp, shared, rng))?,
        );
    }
    tracing::info!(%addr, "mock endpoint listening");
    Ok(MockServer {
        addr,
        shared,
        threads,
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stopped() {
            break;
        }
        let Ok(stream) = conn else { continue };
        let shared = Arc::clone(&shared);
        let _ = thread::Builder::new()
            .name("mock-conn".into())
            .spawn(move || {
                if let Err(e) = handle_connection(stream, &shared) {
                    tracing::debug!("mock connection ended: {e}");
                }
            });
    }
}

fn echo_loop(socket: UdpSocket, shared: Arc<Shared>, mut rng: ChaCha8Rng) {
    let _ = socket.set_read_timeout(Some(POLL));
    let mut buf = [0u8; 2048];
    while !shared.stopped() {
        let (n, peer) = match socket.recv_from(&mut buf) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let (at, behavior) = shared.behavior_now();
        let answer = match behavior {
            Behavior::Timeout => false,
            Behavior::PacketLoss(f) => rng.gen::<f64>() >= f,
            _ => true,
        };
        if answer {
            let _ = socket.send_to(&buf[..n], peer);
        }
        shared.log(at, Channel::Echo, behavior, if answer { "echoed" } else { "dropped" });
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let (at, behavior) = shared.behavior_now();
    stream.set_read_timeout(Some(IDLE_LIMIT))?;
    let _ = stream.set_nodelay(true);
    let mut first = [0u8; 1];
    if stream.peek(&mut first)? == 0 || shared.stopped() {
        return Ok(());
    }
    let channel = if first[0] == TLS_HANDSHAKE_RECORD {
        Channel::Https
    } else {
        Channel::Http
    };
    match behavior {
        Behavior::Timeout => {
            shared.log(at, channel, behavior, "stalled");
            stall(stream, shared);
            Ok(())
        }
        Behavior::Reset => {
            // Consume what the client sent so the close is an abortive reset.
            let mut s = stream;
            let _ = match channel {
                Channel::Https => read_client_hello(&mut s).map(|_| ()),
                _ => read_request_head(&mut s, b"").map(|_| ()),
            };
            shared.log(at, channel, behavior, "reset");
            reset(s);
            Ok(())
        }
        Behavior::DropTls if channel == Channel::Https => {
            let mut s = stream;
            let _ = read_client_hello(&mut s);
            shared.log(at, channel, behavior, "handshake_failure alert");
            s.write_all(&HANDSHAKE_FAILURE_ALERT)?;
            close_gracefully(s);
            Ok(())
        }
        _ => {
            let (status, body_bytes, delay_ms) = match behavior {
                Behavior::Ok {
                    status,
                    body_bytes,
                    delay_ms,
                } => (status, body_bytes, delay_ms),
                Behavior::Status(c) => (c, 0, 0),
                _ => match Behavior::DEFAULT {
                    Behavior::Ok {
                        status,
                        body_bytes,
                        delay_ms,
                    } => (status, body_bytes, delay_ms),
                    _ => unreachable!("default behaviour is OK"),
                },
            };
            let respond = |io: &mut dyn ReadWrite| -> io::Result<()> {
                if read_request_head(&mut ReadAdapter(io), b"")?.is_none() {
                    return Ok(());
                }
                thread::sleep(Duration::from_millis(delay_ms));
                let body = vec![b'x'; body_bytes as usize];
                write_response(io, status, "application/octet-stream", &body)
            };
            if channel == Channel::Http {
                shared.log(at, channel, behavior, format!("status {status}"));
                let mut s = stream;
                respond(&mut s)?;
                close_gracefully(s);
                return Ok(());
            }
            let mut s = stream;
            let (hello, raw) = match read_client_hello(&mut s)? {
                Some(v) => v,
                None => return Ok(()),
            };
            match shared.tls.choose(&hello) {
                Choice::Refuse => {
                    shared.log(at, channel, behavior, "no common suite");
                    s.write_all(&HANDSHAKE_FAILURE_ALERT)?;
                    close_gracefully(s);
                }
                Choice::Emulate(code, version) => {
                    let name = crate::tlsscan::suite_name(code).unwrap_or("?");
                    shared.log(at, channel, behavior, format!("emulated ServerHello {name}"));
                    s.write_all(&server_hello_bytes(code, version, &hello.session_id))?;
                    close_gracefully(s);
                }
                Choice::Real(config) => {
                    let mut conn = rustls::ServerConnection::new(config)
                        .map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
                    let mut replay = Cursor::new(raw);
                    while (replay.position() as usize) < replay.get_ref().len() {
                        conn.read_tls(&mut replay)?;
                    }
                    conn.process_new_packets()
                        .map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
                    let mut tls = rustls::StreamOwned::new(conn, s);
                    let suite = {
                        // Drive the handshake far enough to learn the suite.
                        while tls.conn.is_handshaking() {
                            tls.conn.complete_io(&mut tls.sock)?;
                        }
                        tls.conn
                            .negotiated_cipher_suite()
                            .map(|s| format!("{:?}", s.suite()))
                            .unwrap_or_default()
                    };
                    shared.log(at, channel, behavior, format!("status {status} via {suite}"));
                    respond(&mut tls)?;
                    tls.conn.send_close_notify();
                    let _ = tls.conn.complete_io(&mut tls.sock);
                    close_gracefully(tls.sock);
                }
            }
            Ok(())
        }
    }
}

trait ReadWrite: Read + Write {}
impl<T: Read + Write> ReadWrite for T {}

struct ReadAdapter<'a>(&'a mut dyn ReadWrite);

impl Read for ReadAdapter<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.0.read(buf)
    }
}

/// Buffers a complete ClientHello, returning it with the raw bytes read.
fn read_client_hello(
    s: &mut TcpStream,
) -> io::Result<Option<(crate::tlsscan::ClientHelloInfo, Vec<u8>)>> {
    let mut buf = Vec::with_capacity(2048);
    let mut chunk = [0u8; 4096];
    loop {
        match parse_client_hello(&buf) {
            Ok(Some((hello, _))) => return Ok(Some((hello, buf))),
            Ok(None) => {}
            Err(e) => return Err(io::Error::new(ErrorKind::InvalidData, e.to_string())),
        }
        match s.read(&mut chunk) {
            Ok(0) => return Ok(None),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

fn stall(mut s: TcpStream, shared: &Shared) {
    let _ = s.set_read_timeout(Some(POLL));
    let started = Instant::now();
    let mut sink = [0u8; 4096];
    while !shared.stopped() && started.elapsed() < shared.stall_limit {
        match s.read(&mut sink) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
}

fn reset(s: TcpStream) {
    let sock = socket2::SockRef::from(&s);
    let _ = sock.set_linger(Some(Duration::ZERO));
    drop(s);
}

/// Half-closes and waits briefly for the peer, so unread client bytes never
/// turn the close into a reset that races our last write.
fn close_gracefully(mut s: TcpStream) {
    let _ = s.flush();
    let _ = s.shutdown(Shutdown::Write);
    let _ = s.set_read_timeout(Some(Duration::from_secs(1)));
    let deadline = Instant::now() + Duration::from_secs(2);
    let mut sink = [0u8; 1024];
    while Instant::now() < deadline {
        match s.read(&mut sink) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
    }
}
