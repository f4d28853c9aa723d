use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::process::Command;
use std::time::{Duration, Instant};

/// Answered/lost counts and round-trip times of one echo burst.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoResult {
    pub sent: u32,
    pub lost: u32,
    pub rtts_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EchoError {
    /// The host name did not resolve; recorded as a DNS failure.
    #[error("cannot resolve host: {0}")]
    Resolve(String),
    /// The facility itself is unusable on this machine; aborts the run.
    #[error("{0}")]
    Unavailable(String),
}

/// Source of low-level echo measurements.
pub trait EchoBackend: Send + Sync {
    fn echo(&self, host: &str, port: Option<u16>, count: u32) -> Result<EchoResult, EchoError>;
}

/// The platform `ping` utility.
#[derive(Debug, Clone)]
pub struct SystemPing {
    pub program: String,
    pub per_packet_timeout: Duration,
}

impl Default for SystemPing {
    fn default() -> Self {
        SystemPing {
            program: "ping".into(),
            per_packet_timeout: Duration::from_secs(1),
        }
    }
}

impl SystemPing {
    /// Fails if the utility is missing or lacks privilege to send echoes.
    pub fn check_available(&self) -> Result<(), EchoError> {
        self.echo("127.0.0.1", None, 1).map(|_| ())
    }
}

impl EchoBackend for SystemPing {
    fn echo(&self, host: &str, _port: Option<u16>, count: u32) -> Result<EchoResult, EchoError> {
        let wait = self.per_packet_timeout.as_secs().max(1);
        let output = Command::new(&self.program)
            .arg("-n")
            .arg("-c")
            .arg(count.to_string())
            .arg("-W")
            .arg(wait.to_string())
            .arg(host)
            .env("LC_ALL", "C")
            .output()
            .map_err(|e| EchoError::Unavailable(format!("cannot run {}: {e}", self.program)))?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        if let Some(res) = parse_ping_output(&stdout) {
            return Ok(res);
        }
        let err = stderr.trim();
        let lower = err.to_ascii_lowercase();
        if lower.contains("not permitted")
            || lower.contains("permission denied")
            || lower.contains("socket: ")
        {
            return Err(EchoError::Unavailable(err.to_string()));
        }
        if lower.contains("unknown host")
            || lower.contains("name or service not known")
            || lower.contains("temporary failure in name resolution")
            || lower.contains("cannot resolve")
            || lower.contains("no address associated")
        {
            return Err(EchoError::Resolve(err.to_string()));
        }
        Err(EchoError::Unavailable(format!(
            "unrecognised ping output (status {:?}): {err}",
            output.status.code()
        )))
    }
}

/// Parses the summary of Linux/BSD `ping` output.
///
/// Needs the `N packets transmitted, M received` line; RTTs come from the
/// per-reply `time=X ms` fields.
pub fn parse_ping_output(stdout: &str) -> Option<EchoResult> {
    let summary = stdout
        .lines()
        .find(|l| l.contains("packets transmitted") || l.contains("transmitted,"))?;
    let mut sent = None;
    let mut received = None;
    for part in summary.split(',') {
        let part = part.trim();
        let mut words = part.split_whitespace();
        let Some(n) = words.next().and_then(|w| w.parse::<u32>().ok()) else {
            continue;
        };
        let rest: Vec<&str> = words.collect();
        if rest.first() == Some(&"packets") && rest.get(1) == Some(&"transmitted") {
            sent = Some(n);
        } else if rest.first().is_some_and(|w| w.starts_with("received"))
            || (rest.first() == Some(&"packets") && rest.get(1) == Some(&"received"))
        {
            received = Some(n);
        }
    }
    let sent = sent?;
    let received = received?.min(sent);
    let rtts_ms = stdout
        .lines()
        .filter_map(|l| {
            let at = l.find("time=")?;
            let num: String = l[at + 5..]
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            num.parse::<f64>().ok()
        })
        .collect();
    Some(EchoResult {
        sent,
        lost: sent - received,
        rtts_ms,
    })
}

/// Unprivileged stand-in for ICMP: datagram echo against a UDP listener.
///
/// Each request carries a sequence number and nonce; a reply counts only if it
/// echoes both back before `per_packet_timeout`.
#[derive(Debug, Clone)]
pub struct UdpEcho {
    pub default_port: u16,
    pub per_packet_timeout: Duration,
}

impl Default for UdpEcho {
    fn default() -> Self {
        UdpEcho {
            default_port: 7,
            per_packet_timeout: Duration::from_secs(1),
        }
    }
}

impl EchoBackend for UdpEcho {
    fn echo(&self, host: &str, port: Option<u16>, count: u32) -> Result<EchoResult, EchoError> {
        let port = port.unwrap_or(self.default_port);
        let target: SocketAddr = (host, port)
            .to_socket_addrs()
            .map_err(|e| EchoError::Resolve(format!("{host}: {e}")))?
            .next()
            .ok_or_else(|| EchoError::Resolve(format!("{host}: no addresses")))?;
        let bind: SocketAddr = if target.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(bind)
            .map_err(|e| EchoError::Unavailable(format!("cannot bind echo socket: {e}")))?;
        let nonce: u64 = rand::random();
        let mut rtts_ms = Vec::new();
        let mut lost = 0;
        let mut buf = [0u8; 64];
        for seq in 0..count {
            let mut payload = [0u8; 12];
            payload[..4].copy_from_slice(&seq.to_be_bytes());
            payload[4..].copy_from_slice(&nonce.to_be_bytes());
            let sent_at = Instant::now();
            if socket.send_to(&payload, target).is_err() {
                lost += 1;
                continue;
            }
            let deadline = sent_at + self.per_packet_timeout;
            let mut answered = false;
            loop {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                let _ = socket.set_read_timeout(Some(deadline - now));
                match socket.recv_from(&mut buf) {
                    Ok((n, from)) if from == target && n >= 12 && buf[..12] == payload => {
                        rtts_ms.push(sent_at.elapsed().as_secs_f64() * 1000.0);
                        answered = true;
                        break;
                    }
                    // stale reply from an earlier, timed-out sequence number
                    Ok(_) => continue,
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                        break
                    }
                    // ICMP port unreachable surfaces as ConnectionRefused on some platforms
                    Err(_) => {
                        std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
                        break;
                    }
                }
            }
            if !answered {
                lost += 1;
            }
        }
        Ok(EchoResult {
            sent: count,
            lost,
            rtts_ms,
        })
    }
}
