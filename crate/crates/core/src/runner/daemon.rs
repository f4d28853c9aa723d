use std::io;
use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rustls::ClientConfig;

use super::health::{HealthServer, HealthState};
use super::log::{recover_dir, LogWriter};
use super::schedule::{next_fire_ms, scan_phase_ms, series_phases, SeriesId};
use super::{EchoBackendKind, HealthSnapshot, RunConfig};
use crate::now_ms;
use crate::probe::{
    client_config, http_probe, ping_probe, EchoBackend, EndpointSpec, ProbeConfigError,
    ProbeRecord, Protocol, SystemPing, TlsTrust, UdpEcho,
};
use crate::record::CipherScanRecord;
use crate::tlsscan::{scan_endpoint, ScanOptions, SuiteTable};

const TICK: Duration = Duration::from_millis(50);
const MAX_BACKOFF: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("probe setup: {0}")]
    Probe(#[from] ProbeConfigError),
    #[error("{0}")]
    Io(#[from] io::Error),
}

/// Performs measurements for the daemon. The network implementation is
/// [`NetworkExecutor`]; tests may substitute their own.
pub trait ProbeExecutor: Send + Sync {
    fn probe(&self, endpoint: &EndpointSpec, protocol: Protocol, vantage: &str) -> Result<ProbeRecord, ProbeConfigError>;
    /// Returns the record to log and a diagnostic for the health page.
    fn scan(&self, endpoint: &EndpointSpec, vantage: &str) -> (CipherScanRecord, String);
}

pub struct NetworkExecutor {
    pub timeout_ms: u64,
    pub ping_packets: u32,
    pub echo: Box<dyn EchoBackend>,
    pub tls: Arc<ClientConfig>,
    pub scan: ScanOptions,
}

impl NetworkExecutor {
    pub fn from_config(config: &RunConfig) -> Result<Self, RunError> {
        let trust = match &config.extra_root_pem {
            Some(p) => TlsTrust::with_extra_root_pem(
                std::fs::read(p).map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?,
            ),
            None => TlsTrust::default(),
        };
        let tls = client_config(&trust).map_err(RunError::Config)?;
        let per_packet = Duration::from_millis(config.echo_timeout_ms);
        let wants_icmp = config.endpoints.iter().any(|e| e.supports(Protocol::Icmp));
        let echo: Box<dyn EchoBackend> = match config.echo_backend {
            EchoBackendKind::System => {
                let ping = SystemPing {
                    per_packet_timeout: per_packet,
                    ..SystemPing::default()
                };
                if wants_icmp {
                    ping.check_available()
                        .map_err(|e| ProbeConfigError::EchoUnavailable(e.to_string()))?;
                }
                Box::new(ping)
            }
            EchoBackendKind::Udp => Box::new(UdpEcho {
                per_packet_timeout: per_packet,
                ..UdpEcho::default()
            }),
        };
        Ok(NetworkExecutor {
            timeout_ms: config.timeout_ms,
            ping_packets: config.ping_packets,
            echo,
            tls,
            scan: scan_options(config)?,
        })
    }
}

/// Scanner settings from a daemon config, including any extra suite rows.
pub fn scan_options(config: &RunConfig) -> Result<ScanOptions, RunError> {
    let mut table = SuiteTable::builtin();
    if let Some(p) = &config.suite_table {
        let text = std::fs::read_to_string(p).map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?;
        table.extend_from(&text).map_err(|e| RunError::Config(e.to_string()))?;
    }
    Ok(ScanOptions {
        timeout: Duration::from_millis(config.scan_timeout_ms),
        table,
    })
}

impl ProbeExecutor for NetworkExecutor {
    fn probe(&self, endpoint: &EndpointSpec, protocol: Protocol, vantage: &str) -> Result<ProbeRecord, ProbeConfigError> {
        match protocol {
            Protocol::Icmp => ping_probe(endpoint, self.ping_packets, vantage, self.echo.as_ref()),
            scheme => http_probe(endpoint, scheme, self.timeout_ms, vantage, &self.tls),
        }
    }

    fn scan(&self, endpoint: &EndpointSpec, vantage: &str) -> (CipherScanRecord, String) {
        let (record, result) = scan_endpoint(endpoint, vantage, &self.scan);
        let detail = match result {
            Ok(e) => e.detail,
            Err(e) => e.to_string(),
        };
        (record, detail)
    }
}

/// Test and operations hooks for [`start`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Origin of the firing grid.
    pub epoch_ms: i64,
    /// Replace a worker whose heartbeat is older than this. Defaults to a
    /// bound derived from the probe timeout and interval.
    pub wedge_after: Option<Duration>,
    pub scans: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            epoch_ms: 0,
            wedge_after: None,
            scans: true,
        }
    }
}

struct Shared {
    config: RunConfig,
    executor: Arc<dyn ProbeExecutor>,
    writer: LogWriter,
    health: Arc<HealthState>,
    epoch_ms: i64,
    stop: AtomicBool,
    paused: AtomicBool,
    fatal: Mutex<Option<RunError>>,
    wake: (Mutex<()>, Condvar),
}

impl Shared {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _guard = self.wake.0.lock();
        self.wake.1.notify_all();
    }
}

#[derive(Clone)]
enum Task {
    Series { endpoint: EndpointSpec, protocol: Protocol, phase_ms: u64 },
    Scans,
}

impl Task {
    fn label(&self) -> String {
        match self {
            Task::Series { endpoint, protocol, .. } => format!("{}/{}", endpoint.id, protocol),
            Task::Scans => "scans".into(),
        }
    }
}

enum Exit {
    Stopped,
    Superseded,
    Fatal(ProbeConfigError),
}

struct Control {
    heartbeat: AtomicI64,
    generation: AtomicU64,
    crash: AtomicBool,
}

struct Slot {
    task: Task,
    control: Arc<Control>,
    handle: Option<JoinHandle<Exit>>,
}

struct Ctx<'a> {
    shared: &'a Shared,
    control: &'a Control,
    generation: u64,
}

impl Ctx<'_> {
    fn beat(&self) {
        self.control.heartbeat.store(now_ms(), Ordering::SeqCst);
    }

    fn superseded(&self) -> bool {
        self.control.generation.load(Ordering::SeqCst) != self.generation
    }

    /// Sleeps until `until_ms`; `Some` if the worker should exit instead.
    fn wait_until(&self, until_ms: i64) -> Option<Exit> {
        loop {
            if self.shared.stopped() {
                return Some(Exit::Stopped);
            }
            if self.superseded() {
                return Some(Exit::Superseded);
            }
            self.beat();
            let now = now_ms();
            if now >= until_ms {
                return None;
            }
            let step = Duration::from_millis((until_ms - now) as u64).min(TICK);
            thread::sleep(step);
        }
    }

    /// Appends with exponential backoff until it sticks or the daemon stops.
    fn write(&self, what: &str, f: impl Fn(&LogWriter) -> io::Result<()>) -> bool {
        let mut backoff = TICK;
        loop {
            match f(&self.shared.writer) {
                Ok(()) => return true,
                Err(e) => {
                    tracing::warn!("log write for {what} failed: {e}");
                    self.shared.health.fault(format!("log write for {what} failed: {e}"), true);
                    if self.wait_until(now_ms() + backoff.as_millis() as i64).is_some() && self.shared.stopped() {
                        return false;
                    }
                    backoff = (backoff * 2).min(MAX_BACKOFF);
                }
            }
        }
    }

    fn maybe_crash(&self) {
        if self.control.crash.swap(false, Ordering::SeqCst) {
            panic!("injected worker failure");
        }
    }
}

fn series_worker(ctx: Ctx<'_>, endpoint: &EndpointSpec, protocol: Protocol, phase_ms: u64) -> Exit {
    let shared = ctx.shared;
    let interval_ms = shared.config.probe_interval_s * 1000;
    let label = format!("{}/{}", endpoint.id, protocol);
    let mut last_fire = None;
    loop {
        if let Some(exit) = ctx.wait_until(0) {
            return exit;
        }
        if shared.paused.load(Ordering::SeqCst) {
            thread::sleep(TICK);
            continue;
        }
        let mut fire = next_fire_ms(now_ms(), shared.epoch_ms, phase_ms, interval_ms);
        if last_fire == Some(fire) {
            fire += interval_ms as i64;
        }
        if let Some(exit) = ctx.wait_until(fire) {
            return exit;
        }
        if shared.paused.load(Ordering::SeqCst) {
            continue;
        }
        ctx.maybe_crash();
        last_fire = Some(fire);
        let record = match shared.executor.probe(endpoint, protocol, &shared.config.vantage) {
            Ok(r) => r,
            Err(e) => return Exit::Fatal(e),
        };
        if ctx.superseded() {
            return Exit::Superseded;
        }
        if !ctx.write(&label, |w| w.append_probe(&record)) {
            return Exit::Stopped;
        }
        shared.health.commit_probe(&record);
    }
}

fn scan_worker(ctx: Ctx<'_>) -> Exit {
    let shared = ctx.shared;
    let cfg = &shared.config;
    let interval_ms = cfg.scan_interval_s * 1000;
    let targets: Vec<(&EndpointSpec, u64)> = cfg
        .endpoints
        .iter()
        .filter(|e| e.supports(Protocol::Https))
        .map(|e| (e, scan_phase_ms(&e.id, cfg.scan_interval_s, cfg.stagger)))
        .collect();
    let mut last: Vec<Option<i64>> = vec![None; targets.len()];
    loop {
        if let Some(exit) = ctx.wait_until(0) {
            return exit;
        }
        if targets.is_empty() || shared.paused.load(Ordering::SeqCst) {
            thread::sleep(TICK);
            continue;
        }
        let now = now_ms();
        let (idx, fire) = targets
            .iter()
            .enumerate()
            .map(|(i, (_, phase))| {
                let mut f = next_fire_ms(now, shared.epoch_ms, *phase, interval_ms);
                if last[i] == Some(f) {
                    f += interval_ms as i64;
                }
                (i, f)
            })
            .min_by_key(|p| p.1)
            .expect("non-empty targets");
        if let Some(exit) = ctx.wait_until(fire) {
            return exit;
        }
        if shared.paused.load(Ordering::SeqCst) {
            continue;
        }
        ctx.maybe_crash();
        last[idx] = Some(fire);
        let endpoint = targets[idx].0;
        let (record, detail) = shared.executor.scan(endpoint, &cfg.vantage);
        if ctx.superseded() {
            return Exit::Superseded;
        }
        if !ctx.write(&format!("{}/scan", endpoint.id), |w| w.append_scan(&record)) {
            return Exit::Stopped;
        }
        tracing::info!(endpoint = %endpoint.id, score = ?record.server_score, %detail, "cipher scan");
        shared.health.commit_scan(&record, &detail);
    }
}

fn spawn(shared: &Arc<Shared>, task: &Task, control: &Arc<Control>) -> io::Result<JoinHandle<Exit>> {
    let shared = Arc::clone(shared);
    let control = Arc::clone(control);
    let task = task.clone();
    control.heartbeat.store(now_ms(), Ordering::SeqCst);
    let generation = control.generation.load(Ordering::SeqCst);
    thread::Builder::new().name(format!("worker-{}", task.label())).spawn(move || {
        let ctx = Ctx {
            shared: &shared,
            control: &control,
            generation,
        };
        match &task {
            Task::Series { endpoint, protocol, phase_ms } => series_worker(ctx, endpoint, *protocol, *phase_ms),
            Task::Scans => scan_worker(ctx),
        }
    })
}

fn supervise(shared: Arc<Shared>, mut slots: Vec<Slot>, wedge_after: Duration, scan_wedge_after: Duration) {
    while !shared.stopped() {
        {
            let guard = shared.wake.0.lock().expect("wake lock");
            let _ = shared.wake.1.wait_timeout(guard, Duration::from_millis(100));
        }
        if shared.stopped() {
            break;
        }
        let paused = shared.paused.load(Ordering::SeqCst);
        for slot in &mut slots {
            let label = slot.task.label();
            let finished = slot.handle.as_ref().map_or(true, JoinHandle::is_finished);
            if finished {
                let outcome = slot.handle.take().map(JoinHandle::join);
                match outcome {
                    Some(Ok(Exit::Fatal(e))) => {
                        tracing::error!("{label}: {e}");
                        *shared.fatal.lock().expect("fatal lock") = Some(RunError::Probe(e));
                        shared.request_stop();
                        break;
                    }
                    Some(Ok(Exit::Stopped)) if shared.stopped() => continue,
                    Some(Ok(Exit::Superseded)) => {}
                    Some(Err(_)) | Some(Ok(Exit::Stopped)) | None => {
                        tracing::warn!("worker {label} died; restarting");
                        shared.health.fault(format!("worker {label} died and was restarted"), false);
                        shared.health.worker_restarted();
                    }
                }
                slot.control.generation.fetch_add(1, Ordering::SeqCst);
                match spawn(&shared, &slot.task, &slot.control) {
                    Ok(h) => slot.handle = Some(h),
                    Err(e) => shared.health.fault(format!("cannot restart {label}: {e}"), false),
                }
                continue;
            }
            if paused {
                continue;
            }
            let limit = match slot.task {
                Task::Scans => scan_wedge_after,
                Task::Series { .. } => wedge_after,
            };
            let age = now_ms() - slot.control.heartbeat.load(Ordering::SeqCst);
            if age > limit.as_millis() as i64 {
                tracing::warn!("worker {label} missed its heartbeat for {age} ms; replacing");
                shared.health.fault(format!("worker {label} wedged for {age} ms and was replaced"), false);
                shared.health.worker_restarted();
                // The stuck thread notices the new generation and exits without writing.
                slot.control.generation.fetch_add(1, Ordering::SeqCst);
                drop(slot.handle.take());
                match spawn(&shared, &slot.task, &slot.control) {
                    Ok(h) => slot.handle = Some(h),
                    Err(e) => shared.health.fault(format!("cannot replace {label}: {e}"), false),
                }
            }
        }
    }
    for slot in &mut slots {
        if let Some(h) = slot.handle.take() {
            if slot.control.heartbeat.load(Ordering::SeqCst) + wedge_after.as_millis() as i64 >= now_ms() {
                let _ = h.join();
            }
        }
    }
}

/// Stops a running daemon from another thread (e.g. a signal handler).
#[derive(Clone)]
pub struct Stopper(Arc<Shared>);

impl Stopper {
    pub fn stop(&self) {
        self.0.request_stop();
    }
}

pub struct RunnerHandle {
    shared: Arc<Shared>,
    supervisor: Option<JoinHandle<()>>,
    health: HealthServer,
    slots: Vec<(String, Arc<Control>)>,
}

impl RunnerHandle {
    pub fn health_addr(&self) -> SocketAddr {
        self.health.addr
    }

    pub fn log_dir(&self) -> &Path {
        self.shared.writer.dir()
    }

    pub fn snapshot(&self) -> HealthSnapshot {
        self.shared.health.snapshot(now_ms())
    }

    /// Freezes scheduling, as a wedged daemon would.
    pub fn pause(&self) {
        self.shared.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.shared.paused.store(false, Ordering::SeqCst);
    }

    /// Makes the worker of one series panic when it next fires.
    pub fn inject_worker_failure(&self, endpoint_id: &str, protocol: Protocol) -> bool {
        let label = format!("{endpoint_id}/{protocol}");
        match self.slots.iter().find(|(l, _)| *l == label) {
            Some((_, c)) => {
                c.crash.store(true, Ordering::SeqCst);
                true
            }
            None => false,
        }
    }

    pub fn stopper(&self) -> Stopper {
        Stopper(Arc::clone(&self.shared))
    }

    /// Blocks until the daemon stops, by request or because of a fatal error.
    pub fn wait(mut self) -> Result<(), RunError> {
        if let Some(s) = self.supervisor.take() {
            let _ = s.join();
        }
        self.health.stop();
        match self.shared.fatal.lock().expect("fatal lock").take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn shutdown(self) -> Result<(), RunError> {
        self.shared.request_stop();
        self.wait()
    }
}

impl Drop for RunnerHandle {
    fn drop(&mut self) {
        self.shared.request_stop();
        if let Some(s) = self.supervisor.take() {
            let _ = s.join();
        }
    }
}

/// Starts workers, the supervisor and the health server.
pub fn start(config: RunConfig, executor: Arc<dyn ProbeExecutor>, options: RunOptions) -> Result<RunnerHandle, RunError> {
    config.validate().map_err(|e| RunError::Config(e.to_string()))?;
    for r in recover_dir(&config.log_dir, &config.vantage)? {
        tracing::warn!(
            "quarantined {} torn byte(s) from {} into {}",
            r.bytes,
            r.path.display(),
            r.quarantine.display()
        );
    }
    let writer = LogWriter::new(&config.log_dir, &config.vantage)?;
    let health = Arc::new(HealthState::new(&config.vantage, config.probe_interval_s));
    let health_server = HealthServer::start(SocketAddr::new(config.health_bind, config.health_port), Arc::clone(&health))?;

    let interval = Duration::from_secs(config.probe_interval_s);
    let probe_budget = Duration::from_millis(config.timeout_ms)
        .max(Duration::from_millis(config.echo_timeout_ms * u64::from(config.ping_packets)));
    let wedge_after = options
        .wedge_after
        .unwrap_or(probe_budget + 2 * interval + Duration::from_secs(5));
    let scan_wedge_after = Duration::from_millis(config.scan_timeout_ms) * 400 + Duration::from_secs(config.scan_interval_s);

    let mut tasks: Vec<Task> = series_phases(&config)
        .into_iter()
        .map(|(SeriesId { endpoint_id, protocol }, phase_ms)| Task::Series {
            endpoint: config
                .endpoints
                .iter()
                .find(|e| e.id == endpoint_id)
                .expect("phase for a configured endpoint")
                .clone(),
            protocol,
            phase_ms,
        })
        .collect();
    if options.scans && config.endpoints.iter().any(|e| e.supports(Protocol::Https)) {
        tasks.push(Task::Scans);
    }

    let shared = Arc::new(Shared {
        config,
        executor,
        writer,
        health,
        epoch_ms: options.epoch_ms,
        stop: AtomicBool::new(false),
        paused: AtomicBool::new(false),
        fatal: Mutex::new(None),
        wake: (Mutex::new(()), Condvar::new()),
    });
    let mut slots = Vec::with_capacity(tasks.len());
    let mut controls = Vec::with_capacity(tasks.len());
    for task in tasks {
        let control = Arc::new(Control {
            heartbeat: AtomicI64::new(now_ms()),
            generation: AtomicU64::new(0),
            crash: AtomicBool::new(false),
        });
        let handle = spawn(&shared, &task, &control)?;
        controls.push((task.label(), Arc::clone(&control)));
        slots.push(Slot {
            task,
            control,
            handle: Some(handle),
        });
    }
    let sup_shared = Arc::clone(&shared);
    let supervisor = thread::Builder::new()
        .name("supervisor".into())
        .spawn(move || {
            let _ = panic::catch_unwind(AssertUnwindSafe(|| supervise(sup_shared, slots, wedge_after, scan_wedge_after)));
        })?;
    tracing::info!(addr = %health_server.addr, "health endpoint up");
    Ok(RunnerHandle {
        shared,
        supervisor: Some(supervisor),
        health: health_server,
        slots: controls,
    })
}
