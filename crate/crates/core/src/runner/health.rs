//! Liveness view: the latest committed record per series, served as HTML and JSON.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::httpio::{read_request_head, write_response};
use crate::probe::{OutcomeClass, ProbeRecord, Protocol};
use crate::record::CipherScanRecord;

const MAX_FAULTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHealth {
    pub endpoint_id: String,
    pub protocol: Protocol,
    pub last_timestamp_ms: i64,
    pub last_outcome: OutcomeClass,
    pub last_status: Option<u16>,
    pub last_latency_ms: f64,
    pub records: u64,
    pub age_ms: i64,
    /// Older than twice the probe interval.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanHealth {
    pub endpoint_id: String,
    pub last_timestamp_ms: i64,
    pub server_score: Option<f64>,
    pub suites: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerFault {
    pub at_ms: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthSnapshot {
    pub vantage: String,
    pub generated_ms: i64,
    pub probe_interval_s: u64,
    pub series: Vec<SeriesHealth>,
    pub scans: Vec<ScanHealth>,
    pub faults: Vec<RunnerFault>,
    /// A log write is currently failing.
    pub write_failing: bool,
    pub worker_restarts: u64,
}

impl HealthSnapshot {
    pub fn any_stale(&self) -> bool {
        self.series.iter().any(|s| s.stale)
    }

    pub fn get(&self, endpoint_id: &str, protocol: Protocol) -> Option<&SeriesHealth> {
        self.series
            .iter()
            .find(|s| s.endpoint_id == endpoint_id && s.protocol == protocol)
    }

    pub fn to_html(&self) -> String {
        let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let mut h = format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>apiq health: {v}</title></head><body>\n<h1>Latest measurements from {v}</h1>\n<p>generated_ms {g}, probe interval {i} s, worker restarts {r}{w}</p>\n",
            v = esc(&self.vantage),
            g = self.generated_ms,
            i = self.probe_interval_s,
            r = self.worker_restarts,
            w = if self.write_failing { ", <b>log writes failing</b>" } else { "" },
        );
        h.push_str("<table border=\"1\">\n<tr><th>endpoint</th><th>protocol</th><th>timestamp_ms</th><th>outcome</th><th>status</th><th>latency_ms</th><th>age_s</th><th>stale</th></tr>\n");
        for s in &self.series {
            h.push_str(&format!(
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{:.3}</td><td>{:.1}</td><td>{}</td></tr>\n",
                esc(&s.endpoint_id),
                s.protocol,
                s.last_timestamp_ms,
                s.last_outcome,
                s.last_status.map(|c| c.to_string()).unwrap_or_default(),
                s.last_latency_ms,
                s.age_ms as f64 / 1000.0,
                if s.stale { "STALE" } else { "" },
            ));
        }
        h.push_str("</table>\n");
        if !self.scans.is_empty() {
            h.push_str("<h2>Cipher scans</h2>\n<table border=\"1\">\n<tr><th>endpoint</th><th>timestamp_ms</th><th>server score</th><th>suites</th><th>detail</th></tr>\n");
            for s in &self.scans {
                h.push_str(&format!(
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>\n",
                    esc(&s.endpoint_id),
                    s.last_timestamp_ms,
                    s.server_score.map(|x| format!("{x:.3}")).unwrap_or_else(|| "scan failed".into()),
                    s.suites,
                    esc(&s.detail)
                ));
            }
            h.push_str("</table>\n");
        }
        if !self.faults.is_empty() {
            h.push_str("<h2>Runner faults</h2>\n<ul>\n");
            for f in &self.faults {
                h.push_str(&format!("<li>{}: {}</li>\n", f.at_ms, esc(&f.message)));
            }
            h.push_str("</ul>\n");
        }
        h.push_str("</body></html>\n");
        h
    }
}

#[derive(Default)]
struct Inner {
    series: BTreeMap<(String, Protocol), (ProbeRecord, u64)>,
    scans: BTreeMap<String, ScanHealth>,
    faults: Vec<RunnerFault>,
    write_failing: bool,
    worker_restarts: u64,
}

/// Shared, read-mostly state behind the health endpoint.
pub struct HealthState {
    vantage: String,
    interval_s: u64,
    inner: RwLock<Inner>,
}

impl HealthState {
    pub fn new(vantage: impl Into<String>, interval_s: u64) -> Self {
        HealthState {
            vantage: vantage.into(),
            interval_s,
            inner: RwLock::new(Inner::default()),
        }
    }

    /// Registers a series so it shows up before its first record.
    pub fn commit_probe(&self, r: &ProbeRecord) {
        let mut g = self.inner.write().expect("health lock");
        let e = g
            .series
            .entry((r.endpoint_id.clone(), r.protocol))
            .or_insert_with(|| (r.clone(), 0));
        e.0 = r.clone();
        e.1 += 1;
        g.write_failing = false;
    }

    pub fn commit_scan(&self, r: &CipherScanRecord, detail: &str) {
        let mut g = self.inner.write().expect("health lock");
        g.scans.insert(
            r.endpoint_id.clone(),
            ScanHealth {
                endpoint_id: r.endpoint_id.clone(),
                last_timestamp_ms: r.timestamp_ms,
                server_score: r.server_score,
                suites: r.suites.len(),
                detail: detail.to_string(),
            },
        );
    }

    pub fn fault(&self, message: impl Into<String>, write_failure: bool) {
        let mut g = self.inner.write().expect("health lock");
        g.faults.push(RunnerFault {
            at_ms: crate::now_ms(),
            message: message.into(),
        });
        if g.faults.len() > MAX_FAULTS {
            g.faults.remove(0);
        }
        if write_failure {
            g.write_failing = true;
        }
    }

    pub fn worker_restarted(&self) {
        self.inner.write().expect("health lock").worker_restarts += 1;
    }

    pub fn snapshot(&self, now_ms: i64) -> HealthSnapshot {
        let g = self.inner.read().expect("health lock");
        let limit = 2 * self.interval_s as i64 * 1000;
        HealthSnapshot {
            vantage: self.vantage.clone(),
            generated_ms: now_ms,
            probe_interval_s: self.interval_s,
            series: g
                .series
                .values()
                .map(|(r, n)| {
                    let age = now_ms - r.timestamp_ms;
                    SeriesHealth {
                        endpoint_id: r.endpoint_id.clone(),
                        protocol: r.protocol,
                        last_timestamp_ms: r.timestamp_ms,
                        last_outcome: r.outcome.class,
                        last_status: r.outcome.status_code,
                        last_latency_ms: r.latency_ms,
                        records: *n,
                        age_ms: age,
                        stale: age > limit,
                    }
                })
                .collect(),
            scans: g.scans.values().cloned().collect(),
            faults: g.faults.clone(),
            write_failing: g.write_failing,
            worker_restarts: g.worker_restarts,
        }
    }
}

/// HTTP server for `/health` and `/health.json`.
pub(crate) struct HealthServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl HealthServer {
    pub fn start(addr: SocketAddr, state: Arc<HealthState>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::Builder::new().name("health".into()).spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let state = Arc::clone(&state);
                let _ = thread::Builder::new()
                    .name("health-conn".into())
                    .spawn(move || {
                        let _ = answer(stream, &state);
                    });
            }
        })?;
        Ok(HealthServer {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HealthServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn answer(mut stream: TcpStream, state: &HealthState) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(1)))?;
    stream.set_write_timeout(Some(Duration::from_secs(1)))?;
    let Some(head) = read_request_head(&mut stream, b"")? else {
        return Ok(());
    };
    if head.method != "GET" && head.method != "HEAD" {
        return write_response(&mut stream, 405, "text/plain", b"GET only\n");
    }
    let path = head.path.split('?').next().unwrap_or("");
    let snapshot = state.snapshot(crate::now_ms());
    match path {
        "/health" | "/" => write_response(&mut stream, 200, "text/html; charset=utf-8", snapshot.to_html().as_bytes()),
        "/health.json" => {
            let body = serde_json::to_vec_pretty(&snapshot).map_err(io::Error::other)?;
            write_response(&mut stream, 200, "application/json", &body)
        }
        _ => write_response(&mut stream, 404, "text/plain", b"not found\n"),
    }
}
