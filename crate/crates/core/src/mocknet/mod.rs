//! Fault-injecting mock endpoints.
//!
//! A [`FaultPlan`] maps time windows (offsets from the mock's epoch) to
//! behaviours. One mock serves HTTP and HTTPS on the same TCP port (told apart
//! by the first byte of the connection) and a datagram echo listener on the
//! same UDP port as the unprivileged stand-in for ICMP.
//!
//! Plan file grammar, one item per line, `#` starts a comment:
//!
//! ```text
//! seed = 42
//! tls_preference = ECDHE-RSA-AES256-SHA384;ECDHE-ECDSA-AES128-SHA;RC4-SHA
//! 0,60,OK(200,1024,10)
//! 60,60,STATUS(503)
//! 120,30,TIMEOUT
//! 150,30,RESET
//! 180,30,DROP_TLS
//! 210,60,PACKET_LOSS(0.4)
//! ```
//!
//! Window lines are `start_offset_s,duration_s,BEHAVIOR`; windows are
//! half-open `[start, start + duration)`, ordered and non-overlapping. Outside
//! every window the mock answers `OK(200,1024,10)`.

mod oracle;
mod server;
mod tls;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use oracle::{expected_outcome, expected_report, OracleError, ProbeSchedule};
pub use server::{serve, Channel, GroundTruth, MockOptions, MockServer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Behavior {
    Ok {
        status: u16,
        body_bytes: u64,
        delay_ms: u64,
    },
    Status(u16),
    Timeout,
    Reset,
    DropTls,
    PacketLoss(f64),
}

impl Behavior {
    pub const DEFAULT: Behavior = Behavior::Ok {
        status: 200,
        body_bytes: 1024,
        delay_ms: 10,
    };
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Ok {
                status,
                body_bytes,
                delay_ms,
            } => write!(f, "OK({status},{body_bytes},{delay_ms})"),
            Behavior::Status(c) => write!(f, "STATUS({c})"),
            Behavior::Timeout => f.write_str("TIMEOUT"),
            Behavior::Reset => f.write_str("RESET"),
            Behavior::DropTls => f.write_str("DROP_TLS"),
            Behavior::PacketLoss(p) => write!(f, "PACKET_LOSS({p})"),
        }
    }
}

impl FromStr for Behavior {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| PlanError::Syntax(format!("unclosed arguments in {s:?}")))?;
                (s[..i].trim(), inner.split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(PlanError::Syntax(format!("{name} takes {n} argument(s): {s:?}")))
            }
        };
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| PlanError::Syntax(format!("bad number {v:?} in {s:?}")))
        };
        let status = |v: &str| -> Result<u16, PlanError> {
            let c = num(v)?;
            if (200..=599).contains(&c) {
                Ok(c as u16)
            } else {
                Err(PlanError::Invalid(format!("status {c} outside 200-599")))
            }
        };
        match name {
            "OK" => {
                arity(3)?;
                Ok(Behavior::Ok {
                    status: status(args[0])?,
                    body_bytes: num(args[1])?,
                    delay_ms: num(args[2])?,
                })
            }
            "STATUS" => {
                arity(1)?;
                Ok(Behavior::Status(status(args[0])?))
            }
            "TIMEOUT" => arity(0).map(|_| Behavior::Timeout),
            "RESET" => arity(0).map(|_| Behavior::Reset),
            "DROP_TLS" => arity(0).map(|_| Behavior::DropTls),
            "PACKET_LOSS" => {
                arity(1)?;
                let p: f64 = args[0]
                    .parse()
                    .map_err(|_| PlanError::Syntax(format!("bad fraction in {s:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(PlanError::Invalid(format!("loss fraction {p} outside [0,1]")));
                }
                Ok(Behavior::PacketLoss(p))
            }
            other => Err(PlanError::Syntax(format!("unknown behavior {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub start_offset_s: u64,
    pub duration_s: u64,
    pub behavior: Behavior,
}

impl FaultWindow {
    pub fn end_offset_s(&self) -> u64 {
        self.start_offset_s + self.duration_s
    }

    fn contains_ms(&self, offset_ms: i64) -> bool {
        let start = self.start_offset_s as i64 * 1000;
        let end = self.end_offset_s() as i64 * 1000;
        offset_ms >= start && offset_ms < end
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<PlanError>,
    },
    #[error("cannot read plan: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub windows: Vec<FaultWindow>,
    /// Suite names in the order the mock's TLS listener prefers them.
    pub tls_preference: Option<Vec<String>>,
    /// Seeds the packet-loss generator shared by the mock and the oracle.
    pub seed: Option<u64>,
}

impl FaultPlan {
    pub fn new(windows: Vec<FaultWindow>) -> Result<Self, PlanError> {
        let plan = FaultPlan {
            windows,
            ..Default::default()
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let mut prev_end = 0;
        for (i, w) in self.windows.iter().enumerate() {
            if w.duration_s == 0 {
                return Err(PlanError::Invalid(format!("window {i} has zero duration")));
            }
            if i > 0 && w.start_offset_s < prev_end {
                return Err(PlanError::Invalid(format!(
                    "window {i} starts at {}s, before the previous window ends at {prev_end}s",
                    w.start_offset_s
                )));
            }
            if let Behavior::PacketLoss(p) = w.behavior {
                if !(0.0..=1.0).contains(&p) {
                    return Err(PlanError::Invalid(format!("loss fraction {p} outside [0,1]")));
                }
            }
            prev_end = w.end_offset_s();
        }
        if let Some(pref) = &self.tls_preference {
            let mut seen = std::collections::HashSet::new();
            for name in pref {
                if crate::tlsscan::suite_code(name).is_none() {
                    return Err(PlanError::Invalid(format!("unknown TLS suite {name}")));
                }
                if !seen.insert(name) {
                    return Err(PlanError::Invalid(format!("suite {name} listed twice")));
                }
            }
            if pref.is_empty() {
                return Err(PlanError::Invalid("empty tls_preference".into()));
            }
        }
        Ok(())
    }

    /// Behaviour for a request arriving `offset_ms` after the epoch.
    pub fn behavior_at(&self, offset_ms: i64) -> Behavior {
        self.windows
            .iter()
            .find(|w| w.contains_ms(offset_ms))
            .map(|w| w.behavior)
            .unwrap_or(Behavior::DEFAULT)
    }

    pub fn has_packet_loss(&self) -> bool {
        self.windows
            .iter()
            .any(|w| matches!(w.behavior, Behavior::PacketLoss(_)))
    }

    /// End of the last window, in seconds.
    pub fn span_s(&self) -> u64 {
        self.windows.last().map_or(0, FaultWindow::end_offset_s)
    }

    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let mut plan = FaultPlan::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: PlanError| PlanError::AtLine {
                line: i + 1,
                source: Box::new(e),
            };
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "seed" => {
                        plan.seed = Some(value.parse().map_err(|_| {
                            at(PlanError::Syntax(format!("bad seed {value:?}")))
                        })?)
                    }
                    "tls_preference" => {
                        plan.tls_preference = Some(
                            value
                                .split(';')
                                .map(str::trim)
                                .filter(|s| !s.is_empty())
                                .map(str::to_string)
                                .collect(),
                        )
                    }
                    other => {
                        return Err(at(PlanError::Syntax(format!("unknown setting {other:?}"))))
                    }
                }
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let mut field = |what: &str| {
                parts
                    .next()
                    .map(str::trim)
                    .ok_or_else(|| at(PlanError::Syntax(format!("missing {what}"))))
            };
            let start = field("start_offset_s")?;
            let duration = field("duration_s")?;
            let behavior = field("behavior")?;
            let start_offset_s = start
                .parse()
                .map_err(|_| at(PlanError::Syntax(format!("bad start offset {start:?}"))))?;
            let duration_s = duration
                .parse()
                .map_err(|_| at(PlanError::Syntax(format!("bad duration {duration:?}"))))?;
            plan.windows.push(FaultWindow {
                start_offset_s,
                duration_s,
                behavior: behavior.parse().map_err(at)?,
            });
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlanError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            out.push_str(&format!("seed = {seed}\n"));
        }
        if let Some(pref) = &self.tls_preference {
            out.push_str(&format!("tls_preference = {}\n", pref.join(";")));
        }
        for w in &self.windows {
            out.push_str(&format!("{},{},{}\n", w.start_offset_s, w.duration_s, w.behavior));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sample
seed = 7
tls_preference = ECDHE-RSA-AES256-SHA384;ECDHE-ECDSA-AES128-SHA;RC4-SHA
0,60,OK(200,1024,10)
60,60,STATUS(503)   # outage
120,30,TIMEOUT
150,30,RESET
180,30,DROP_TLS
210,60,PACKET_LOSS(0.4)
";

    #[test]
    fn parses_full_grammar() {
        let plan = FaultPlan::parse(SAMPLE).unwrap();
        assert_eq!(plan.seed, Some(7));
        assert_eq!(plan.tls_preference.as_ref().unwrap().len(), 3);
        assert_eq!(plan.windows.len(), 6);
        assert_eq!(plan.windows[1].behavior, Behavior::Status(503));
        assert_eq!(plan.windows[5].behavior, Behavior::PacketLoss(0.4));
        assert_eq!(plan.span_s(), 270);
        assert_eq!(FaultPlan::parse(&plan.to_text()).unwrap(), plan);
    }

    #[test]
    fn windows_are_half_open() {
        let plan = FaultPlan::parse("0,60,OK(200,10,0)\n60,60,STATUS(503)").unwrap();
        assert_eq!(plan.behavior_at(59_999), Behavior::Ok { status: 200, body_bytes: 10, delay_ms: 0 });
        assert_eq!(plan.behavior_at(60_000), Behavior::Status(503));
        assert_eq!(plan.behavior_at(119_999), Behavior::Status(503));
        assert_eq!(plan.behavior_at(120_000), Behavior::DEFAULT);
        assert_eq!(plan.behavior_at(-1), Behavior::DEFAULT);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(FaultPlan::parse("0,60,OK(200,1,1)\n30,60,TIMEOUT").is_err());
        assert!(FaultPlan::parse("0,0,TIMEOUT").is_err());
        assert!(FaultPlan::parse("0,10,PACKET_LOSS(1.5)").is_err());
        assert!(FaultPlan::parse("0,10,STATUS(99)").is_err());
        assert!(FaultPlan::parse("0,10,WAT").is_err());
        assert!(FaultPlan::parse("0,10,OK(200)").is_err());
        assert!(FaultPlan::parse("tls_preference = NOT-A-SUITE").is_err());
        let e = FaultPlan::parse("0,10,TIMEOUT\nbogus").unwrap_err();
        assert!(matches!(e, PlanError::AtLine { line: 2, .. }), "{e}");
    }
}
