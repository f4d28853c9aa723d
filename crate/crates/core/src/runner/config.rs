use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::probe::{is_label, EndpointSpec, DEFAULT_PING_PACKETS, DEFAULT_TIMEOUT_MS};

pub const DEFAULT_PROBE_INTERVAL_S: u64 = 300;
pub const DEFAULT_SCAN_INTERVAL_S: u64 = 43_200;
pub const DEFAULT_HEALTH_PORT: u16 = 8080;

pub const ENV_VANTAGE: &str = "APIQ_VANTAGE";
pub const ENV_LOG_DIR: &str = "APIQ_LOG_DIR";
pub const ENV_HEALTH_PORT: &str = "APIQ_HEALTH_PORT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EchoBackendKind {
    /// The platform `ping` utility (real ICMP).
    #[default]
    System,
    /// Datagram echo to the endpoint's port (or 7); for unprivileged test setups.
    Udp,
}

fn d_interval() -> u64 {
    DEFAULT_PROBE_INTERVAL_S
}
fn d_scan() -> u64 {
    DEFAULT_SCAN_INTERVAL_S
}
fn d_true() -> bool {
    true
}
fn d_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}
fn d_log_dir() -> PathBuf {
    PathBuf::from("logs")
}
fn d_health_port() -> u16 {
    DEFAULT_HEALTH_PORT
}
fn d_health_bind() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}
fn d_packets() -> u32 {
    DEFAULT_PING_PACKETS
}
fn d_echo_timeout() -> u64 {
    1000
}
fn d_scan_timeout() -> u64 {
    10_000
}

/// Daemon configuration, read from TOML.
///
/// ```toml
/// vantage = "eu-central-1"
/// probe_interval_s = 300
/// scan_interval_s = 43200
/// log_dir = "/var/lib/apiq"
/// health_port = 8080
///
/// [[endpoints]]
/// id = "weather"
/// url = "api.example.org/v1/status"
/// protocols = ["ICMP", "HTTP", "HTTPS"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vantage: String,
    #[serde(default)]
    pub endpoints: Vec<EndpointSpec>,
    #[serde(default = "d_interval")]
    pub probe_interval_s: u64,
    #[serde(default = "d_scan")]
    pub scan_interval_s: u64,
    #[serde(default = "d_true")]
    pub stagger: bool,
    #[serde(default = "d_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "d_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default = "d_health_port")]
    pub health_port: u16,
    #[serde(default = "d_health_bind")]
    pub health_bind: IpAddr,
    #[serde(default = "d_packets")]
    pub ping_packets: u32,
    #[serde(default)]
    pub echo_backend: EchoBackendKind,
    /// Per-packet wait for echo replies.
    #[serde(default = "d_echo_timeout")]
    pub echo_timeout_ms: u64,
    /// Per-handshake budget during cipher scans.
    #[serde(default = "d_scan_timeout")]
    pub scan_timeout_ms: u64,
    /// Additional trusted root certificates (PEM), e.g. for a local mock.
    #[serde(default)]
    pub extra_root_pem: Option<PathBuf>,
    /// Extra suite classification rows merged over the built-in table.
    #[serde(default)]
    pub suite_table: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("bad config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// A configuration with every default and no endpoints.
    pub fn new(vantage: impl Into<String>) -> Self {
        RunConfig::from_toml_str(&format!("vantage = {:?}", vantage.into()))
            .expect("defaults form a valid config")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        if cfg.log_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.log_dir = parent.join(&cfg.log_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(ENV_VANTAGE) {
            self.vantage = v;
        }
        if let Some(v) = get(ENV_LOG_DIR) {
            self.log_dir = PathBuf::from(v);
        }
        if let Some(v) = get(ENV_HEALTH_PORT) {
            self.health_port = v
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_HEALTH_PORT}={v:?} is not a port")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !is_label(&self.vantage) {
            return bad(format!("vantage {:?} must be a non-empty label without '|' or whitespace", self.vantage));
        }
        if self.probe_interval_s < 1 {
            return bad("probe_interval_s must be at least 1".into());
        }
        if self.scan_interval_s < self.probe_interval_s {
            return bad(format!(
                "scan_interval_s ({}) must not be shorter than probe_interval_s ({})",
                self.scan_interval_s, self.probe_interval_s
            ));
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive".into());
        }
        if self.ping_packets == 0 {
            return bad("ping_packets must be at least 1".into());
        }
        let mut ids = HashSet::new();
        let mut series = 0u64;
        for e in &self.endpoints {
            e.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
            if !ids.insert(&e.id) {
                return bad(format!("duplicate endpoint id {}", e.id));
            }
            series += e.protocols.len() as u64;
        }
        if self.stagger && series > self.probe_interval_s * 1000 {
            return bad("more series than distinct millisecond phases in one interval".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
