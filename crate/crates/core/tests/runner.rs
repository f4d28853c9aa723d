use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use apiq_core::analysis::series_from_records;
use apiq_core::mocknet::{serve, FaultPlan, MockOptions};
use apiq_core::now_ms;
use apiq_core::probe::{classify_outcome, EndpointSpec, OutcomeClass, ProbeConfigError, ProbeRecord, Protocol};
use apiq_core::record::{format_probe, parse_probe, CipherScanRecord};
use apiq_core::runner::{
    self, log_file_name, HealthSnapshot, NetworkExecutor, ProbeExecutor, RunConfig, RunOptions, RunnerHandle,
};

/// Succeeds instantly, except that the call numbered in `hang` blocks first.
#[derive(Default)]
struct Fake {
    calls: AtomicU64,
    hang: Mutex<Option<(u64, Duration)>>,
}

impl ProbeExecutor for Fake {
    fn probe(&self, endpoint: &EndpointSpec, protocol: Protocol, vantage: &str) -> Result<ProbeRecord, ProbeConfigError> {
        let started = now_ms();
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let hang = *self.hang.lock().unwrap();
        if let Some((at, d)) = hang {
            if n == at {
                thread::sleep(d);
            }
        }
        Ok(ProbeRecord {
            timestamp_ms: started,
            vantage: vantage.into(),
            endpoint_id: endpoint.id.clone(),
            protocol,
            latency_ms: 1.0,
            outcome: classify_outcome(Some(200), None).unwrap(),
            bytes: 0,
            packets_sent: None,
            packets_lost: None,
        })
    }

    fn scan(&self, endpoint: &EndpointSpec, vantage: &str) -> (CipherScanRecord, String) {
        (
            CipherScanRecord {
                timestamp_ms: now_ms(),
                vantage: vantage.into(),
                endpoint_id: endpoint.id.clone(),
                suites: vec![],
                server_score: None,
            },
            "fake".into(),
        )
    }
}

fn config(dir: &Path, protocols: &[Protocol]) -> RunConfig {
    let mut c = RunConfig::new("t");
    c.probe_interval_s = 1;
    c.scan_interval_s = 3600;
    c.stagger = false;
    c.health_port = 0;
    c.timeout_ms = 300;
    c.log_dir = dir.join("logs");
    c.endpoints = vec![EndpointSpec::new("e", "127.0.0.1:9/", protocols.iter().copied()).unwrap()];
    c
}

fn grid_epoch() -> i64 {
    (now_ms() / 1000 + 1) * 1000
}

fn start(c: RunConfig, ex: Arc<dyn ProbeExecutor>, epoch: i64, wedge: Option<Duration>) -> RunnerHandle {
    runner::start(
        c,
        ex,
        RunOptions {
            epoch_ms: epoch,
            wedge_after: wedge,
            scans: false,
        },
    )
    .unwrap()
}

fn logged(dir: &Path) -> Vec<ProbeRecord> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir.join("logs")).unwrap() {
        let p = e.unwrap().path();
        if p.to_string_lossy().ends_with(".log") && !p.to_string_lossy().ends_with(".scan.log") {
            for line in fs::read_to_string(&p).unwrap().lines() {
                out.push(parse_probe(line).unwrap());
            }
        }
    }
    out.sort_by_key(|r| r.timestamp_ms);
    out
}

/// Grid slot of each record; panics if one is off the grid.
fn slots(records: &[ProbeRecord], epoch: i64) -> Vec<i64> {
    records
        .iter()
        .map(|r| {
            let off = r.timestamp_ms - epoch;
            assert!(off.rem_euclid(1000) < 150, "record at {off} ms is off the grid");
            off / 1000
        })
        .collect()
}

fn get(addr: SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn killed_endpoint_yields_connect_failures_without_holes() {
    let dir = tempfile::tempdir().unwrap();
    let mock = serve(FaultPlan::default(), 0, MockOptions::default()).unwrap();
    let mut c = config(dir.path(), &[Protocol::Http]);
    c.endpoints = vec![EndpointSpec::new("e", format!("127.0.0.1:{}/", mock.port()), [Protocol::Http]).unwrap()];
    let ex = NetworkExecutor::from_config(&c).unwrap();
    let epoch = grid_epoch();
    let h = start(c, Arc::new(ex), epoch, None);
    thread::sleep(Duration::from_millis(3500));
    mock.shutdown();
    thread::sleep(Duration::from_millis(3000));
    h.shutdown().unwrap();

    let recs = logged(dir.path());
    let s = slots(&recs, epoch);
    assert_eq!(s, (s[0]..s[0] + s.len() as i64).collect::<Vec<_>>(), "every slot recorded");
    let classes: Vec<_> = recs.iter().map(|r| r.outcome.class).collect();
    let first_fail = classes.iter().position(|c| *c != OutcomeClass::Success).expect("failures after kill");
    assert!(first_fail >= 2);
    assert!(classes[first_fail..].iter().all(|c| *c == OutcomeClass::ConnectFailure), "{classes:?}");
    let (series, _) = series_from_records(recs, 1, 2.0).unwrap();
    assert!(series[0].gaps.is_empty());
}

#[test]
fn dead_worker_is_restarted_and_leaves_a_hole() {
    let dir = tempfile::tempdir().unwrap();
    let epoch = grid_epoch();
    let h = start(config(dir.path(), &[Protocol::Http]), Arc::new(Fake::default()), epoch, None);
    thread::sleep(Duration::from_millis(2300));
    assert!(h.inject_worker_failure("e", Protocol::Http));
    thread::sleep(Duration::from_millis(3000));
    let snap = h.snapshot();
    h.shutdown().unwrap();

    assert_eq!(snap.worker_restarts, 1);
    let recs = logged(dir.path());
    assert!(recs.iter().all(|r| r.outcome.class == OutcomeClass::Success), "no fabricated failures");
    let s = slots(&recs, epoch);
    let missing: Vec<i64> = (s[0]..=*s.last().unwrap()).filter(|k| !s.contains(k)).collect();
    assert_eq!(missing.len(), 1, "slots {s:?}");
}

#[test]
fn wedged_worker_is_replaced_and_its_late_result_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let fake = Arc::new(Fake::default());
    *fake.hang.lock().unwrap() = Some((2, Duration::from_millis(4000)));
    let epoch = grid_epoch();
    let h = start(config(dir.path(), &[Protocol::Http]), fake, epoch, Some(Duration::from_millis(1500)));
    thread::sleep(Duration::from_millis(8000));
    let snap = h.snapshot();
    h.shutdown().unwrap();

    assert_eq!(snap.worker_restarts, 1, "{:?}", snap.faults);
    assert!(snap.faults.iter().any(|f| f.message.contains("wedged")));
    let recs = logged(dir.path());
    let s = slots(&recs, epoch);
    assert!(!s.contains(&2), "late record of the wedged probe was written: {s:?}");
    let (series, _) = series_from_records(recs, 1, 2.0).unwrap();
    assert_eq!(series[0].gaps.len(), 1, "{s:?}");
}

#[test]
fn paused_scheduler_goes_stale_then_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(config(dir.path(), &[Protocol::Http, Protocol::Https]), Arc::new(Fake::default()), 0, None);
    thread::sleep(Duration::from_millis(1500));
    assert!(!h.snapshot().any_stale());
    h.pause();
    thread::sleep(Duration::from_millis(2600));
    let json = get(h.health_addr(), "/health.json");
    let snap: HealthSnapshot = serde_json::from_str(json.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert!(snap.any_stale());
    assert!(snap.series.iter().all(|s| s.age_ms > 2000));
    h.resume();
    thread::sleep(Duration::from_millis(1500));
    assert!(!h.snapshot().any_stale());
    h.shutdown().unwrap();
}

#[test]
fn empty_config_serves_empty_health() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), &[Protocol::Http]);
    c.endpoints.clear();
    let h = start(c, Arc::new(Fake::default()), 0, None);
    let resp = get(h.health_addr(), "/health.json");
    assert!(resp.starts_with("HTTP/1.1 200"));
    let snap: HealthSnapshot = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert!(snap.series.is_empty());
    assert!(get(h.health_addr(), "/health").starts_with("HTTP/1.1 200"));
    h.shutdown().unwrap();
}

#[test]
fn log_write_failure_is_retried_and_surfaced() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    fs::create_dir_all(&logs).unwrap();
    let today = chrono::Utc::now().date_naive();
    let blocker = logs.join(log_file_name(today, "t"));
    // A directory where the log file should be makes every append fail.
    fs::create_dir(&blocker).unwrap();
    let h = start(config(dir.path(), &[Protocol::Http]), Arc::new(Fake::default()), 0, None);
    thread::sleep(Duration::from_millis(1500));
    let snap = h.snapshot();
    assert!(snap.write_failing);
    assert!(snap.faults.iter().any(|f| f.message.contains("log write")));
    assert!(snap.series.is_empty(), "nothing committed while writes fail");
    fs::remove_dir(&blocker).unwrap();
    thread::sleep(Duration::from_millis(7000));
    let snap = h.snapshot();
    h.shutdown().unwrap();
    assert!(!snap.write_failing);
    assert!(!logged(dir.path()).is_empty());
}

#[test]
fn torn_tail_is_quarantined_on_start() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    fs::create_dir_all(&logs).unwrap();
    let path = logs.join(log_file_name(chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), "t"));
    let good = ProbeRecord {
        timestamp_ms: 1_577_836_800_000,
        vantage: "t".into(),
        endpoint_id: "e".into(),
        protocol: Protocol::Http,
        latency_ms: 3.0,
        outcome: classify_outcome(Some(200), None).unwrap(),
        bytes: 1,
        packets_sent: None,
        packets_lost: None,
    };
    let line = format_probe(&good);
    fs::write(&path, format!("{line}\n{}", &line[..12])).unwrap();
    let h = start(config(dir.path(), &[Protocol::Http]), Arc::new(Fake::default()), 0, None);
    h.shutdown().unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), format!("{line}\n"));
    let q = fs::read_to_string(format!("{}.quarantine", path.display())).unwrap();
    assert_eq!(q.trim_end(), &line[..12]);
}
