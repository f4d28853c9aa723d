use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use apiq_core::analysis::{
    compare_runs, load_series, quality_report, suite_census, write_report, LoadOutput, ReportOptions, RunStats,
    SummaryRow, DEFAULT_ALIGNMENT_WINDOW_S, DEFAULT_GAP_THRESHOLD,
};
use apiq_core::mocknet::{serve, FaultPlan, MockOptions};
use apiq_core::probe::Protocol;
use apiq_core::record::format_scan;
use apiq_core::runner::{self, LogWriter, NetworkExecutor, RunConfig, RunOptions, DEFAULT_PROBE_INTERVAL_S};
use apiq_core::tlsscan::{scan_endpoint, SuiteTable};

#[derive(Parser)]
#[command(name = "apiq", version, about = "Web API quality benchmarking: probe, scan, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the measurement daemon until interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Scan the cipher-suite preferences of every HTTPS endpoint.
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// One pass, then exit.
        #[arg(long)]
        once: bool,
    },
    /// Load logs, run every analysis and write a report directory.
    Analyze {
        /// Log files or directories containing them.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        /// Failover alignment window in seconds.
        #[arg(long, default_value_t = DEFAULT_ALIGNMENT_WINDOW_S)]
        window: u64,
        /// Omit timestamps from generated pages.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Compare two measurement runs.
    Compare {
        #[arg(long = "a", num_args = 1.., required = true)]
        run_a: Vec<PathBuf>,
        #[arg(long = "b", num_args = 1.., required = true)]
        run_b: Vec<PathBuf>,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Serve a fault-injecting mock endpoint.
    Mock {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Write the self-signed certificate (PEM) here.
        #[arg(long)]
        cert_out: Option<PathBuf>,
        /// Append what was served to this file.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Print a JSON quality report for one endpoint and vantage.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        vantage: String,
        /// Inclusive start: epoch milliseconds or RFC 3339.
        #[arg(long)]
        from: Option<String>,
        /// Exclusive end: epoch milliseconds or RFC 3339.
        #[arg(long)]
        to: Option<String>,
        #[command(flatten)]
        load: LoadArgs,
    },
}

#[derive(Args)]
struct LoadArgs {
    /// Probe interval the logs were recorded with, in seconds.
    #[arg(long, default_value_t = DEFAULT_PROBE_INTERVAL_S)]
    interval: u64,
    /// A spacing above this many intervals is a gap.
    #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD)]
    gap_threshold: f64,
    /// Leave this endpoint out (repeatable), e.g. one that went offline for good.
    #[arg(long = "exclude-endpoint", value_name = "ID")]
    exclude: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config } => run(&config),
        Command::Scan { config, once } => scan(&config, once),
        Command::Analyze {
            logs,
            out,
            load,
            window,
            deterministic,
            format,
        } => analyze(&logs, &out, &load, window, deterministic, format),
        Command::Compare {
            run_a,
            run_b,
            load,
            format,
        } => compare(&run_a, &run_b, &load, format),
        Command::Mock {
            plan,
            port,
            cert_out,
            ground_truth,
        } => mock(&plan, port, cert_out.as_deref(), ground_truth),
        Command::Report {
            logs,
            endpoint,
            vantage,
            from,
            to,
            load,
        } => report(&logs, &endpoint, &vantage, from.as_deref(), to.as_deref(), &load),
    }
}

fn interrupt_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)).context("installing signal handler")?;
    Ok(flag)
}

fn run(path: &Path) -> Result<ExitCode> {
    let config = RunConfig::load(path)?;
    let executor = NetworkExecutor::from_config(&config)?;
    let series: usize = config.endpoints.iter().map(|e| e.protocols.len()).sum();
    let handle = runner::start(config, Arc::new(executor), RunOptions::default())?;
    eprintln!(
        "apiq: {series} series running, logs in {}, health at http://{}/health",
        handle.log_dir().display(),
        handle.health_addr()
    );
    let stopper = handle.stopper();
    ctrlc::set_handler(move || stopper.stop()).context("installing signal handler")?;
    handle.wait()?;
    eprintln!("apiq: stopped");
    Ok(ExitCode::SUCCESS)
}

fn scan(path: &Path, once: bool) -> Result<ExitCode> {
    let config = RunConfig::load(path)?;
    let options = runner::scan_options(&config)?;
    let targets: Vec<_> = config.endpoints.iter().filter(|e| e.supports(Protocol::Https)).collect();
    if targets.is_empty() {
        bail!("no endpoint in {} enables HTTPS", path.display());
    }
    let writer = LogWriter::new(&config.log_dir, &config.vantage)?;
    let stop = interrupt_flag()?;
    let mut all_ok = true;
    loop {
        for e in &targets {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let (record, result) = scan_endpoint(e, &config.vantage, &options);
            writer.append_scan(&record)?;
            println!("{}", format_scan(&record));
            if let Err(err) = result {
                eprintln!("{}: {err}", e.id);
                all_ok = false;
            }
        }
        if once || stop.load(Ordering::SeqCst) {
            break;
        }
        let until = std::time::Instant::now() + Duration::from_secs(config.scan_interval_s);
        while std::time::Instant::now() < until && !stop.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(200));
        }
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Expands directories into the log files they contain.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "log"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    if out.is_empty() {
        bail!("no log files given");
    }
    Ok(out)
}

fn load(paths: &[PathBuf], args: &LoadArgs) -> Result<LoadOutput> {
    let files = expand(paths)?;
    let mut data = load_series(&files, args.interval, args.gap_threshold)?;
    data.series.retain(|s| !args.exclude.contains(&s.key.endpoint_id));
    data.scans.retain(|s| !args.exclude.contains(&s.endpoint_id));
    if data.series.is_empty() && data.scans.is_empty() {
        bail!("no parseable records in {} file(s)", files.len());
    }
    if !data.quarantined.is_empty() {
        eprintln!("warning: {} line(s) quarantined", data.quarantined.len());
    }
    Ok(data)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn print_rows(rows: &[SummaryRow], format: Format) -> Result<()> {
    let stdout = io::stdout();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout.lock());
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Table => {
            let mut out = stdout.lock();
            writeln!(
                out,
                "{:<20} {:<6} {:<16} {:>8} {:>5} {:>10} {:>10} {:>10} {:>10}",
                "endpoint", "proto", "vantage", "records", "gaps", "ping", "access", "success", "p90_ms"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{:<20} {:<6} {:<16} {:>8} {:>5} {:>10} {:>10} {:>10} {:>10}",
                    r.endpoint_id,
                    r.protocol.to_string(),
                    r.vantage,
                    r.records,
                    r.gaps,
                    opt(r.pingability),
                    opt(r.accessibility),
                    opt(r.successability),
                    r.p90_ms.map(|v| format!("{v:.3}")).unwrap_or_default()
                )?;
            }
        }
    }
    Ok(())
}

fn analyze(logs: &[PathBuf], out: &Path, args: &LoadArgs, window: u64, deterministic: bool, format: Format) -> Result<ExitCode> {
    if window == 0 {
        bail!("--window must be positive");
    }
    let data = load(logs, args)?;
    let options = ReportOptions {
        window_s: window,
        deterministic,
        ..ReportOptions::default()
    };
    let summary = write_report(out, &data, &options)?;
    print_rows(&summary.rows, format)?;
    for n in &summary.notes {
        eprintln!("note: {n}");
    }
    eprintln!(
        "wrote {} file(s) to {} ({} scan record(s), {} quarantined line(s))",
        summary.files.len(),
        out.display(),
        summary.scans,
        summary.quarantined
    );
    Ok(ExitCode::SUCCESS)
}

fn compare(a: &[PathBuf], b: &[PathBuf], args: &LoadArgs, format: Format) -> Result<ExitCode> {
    let run_a = load(a, args)?;
    let run_b = load(b, args)?;
    let cmp = compare_runs(
        &RunStats::from_data(&run_a.series, &run_a.scans),
        &RunStats::from_data(&run_b.series, &run_b.scans),
    );
    let census = suite_census(&run_a.scans, &run_b.scans, &SuiteTable::builtin());
    let stdout = io::stdout();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record(["endpoint", "protocol", "vantage", "status", "p90_a", "p90_b", "p90_rel", "stddev_a", "stddev_b", "stddev_rel"])?;
            for d in &cmp.deltas {
                w.write_record([
                    d.key.endpoint_id.clone(),
                    d.key.protocol.to_string(),
                    d.key.vantage.clone(),
                    "both".into(),
                    d.p90_a.to_string(),
                    d.p90_b.to_string(),
                    d.p90_rel.to_string(),
                    d.stddev_a.to_string(),
                    d.stddev_b.to_string(),
                    d.stddev_rel.map(|x| x.to_string()).unwrap_or_default(),
                ])?;
            }
            for (status, keys) in [("discontinued", &cmp.discontinued), ("new", &cmp.new)] {
                for k in keys {
                    let mut row = vec![k.endpoint_id.clone(), k.protocol.to_string(), k.vantage.clone(), status.into()];
                    row.extend(std::iter::repeat(String::new()).take(6));
                    w.write_record(&row)?;
                }
            }
            w.flush()?;
        }
        Format::Table => {
            let mut out = stdout.lock();
            writeln!(out, "{:<40} {:>10} {:>10} {:>9} {:>9}", "series", "p90_a", "p90_b", "p90_rel", "sd_rel")?;
            for d in &cmp.deltas {
                writeln!(
                    out,
                    "{:<40} {:>10.3} {:>10.3} {:>+9.3} {:>9}",
                    d.key.to_string(),
                    d.p90_a,
                    d.p90_b,
                    d.p90_rel,
                    d.stddev_rel.map(|x| format!("{x:+.3}")).unwrap_or_else(|| "-".into())
                )?;
            }
            writeln!(
                out,
                "p90 increased {}, decreased {}, unchanged {}",
                cmp.p90_increases, cmp.p90_decreases, cmp.p90_flat
            )?;
            for k in &cmp.discontinued {
                writeln!(out, "discontinued: {k}")?;
            }
            for k in &cmp.new {
                writeln!(out, "new: {k}")?;
            }
            for (e, v, sa, sb) in &cmp.score_changes {
                writeln!(out, "score {e}/{v}: {sa:.3} -> {sb:.3}")?;
            }
            if let Some(m) = cmp.score_median_abs_rel_change {
                writeln!(out, "median |relative score change|: {m:.4}")?;
            }
            writeln!(
                out,
                "suites only in A: {}; only in B: {}; weak occurrences A {} / B {}",
                census.only_in_a.len(),
                census.only_in_b.len(),
                census.weak_occurrences_a,
                census.weak_occurrences_b
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn mock(plan_path: &Path, port: u16, cert_out: Option<&Path>, ground_truth: Option<PathBuf>) -> Result<ExitCode> {
    let plan = FaultPlan::load(plan_path)?;
    let stop = interrupt_flag()?;
    let server = serve(
        plan,
        port,
        MockOptions {
            ground_truth_path: ground_truth,
            ..MockOptions::default()
        },
    )
    .with_context(|| format!("starting mock on port {port}"))?;
    if let Some(p) = cert_out {
        fs::write(p, server.cert_pem()).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("listening on {} (epoch_ms {})", server.addr(), server.epoch_ms());
    io::stdout().flush()?;
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    server.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn parse_instant(s: &str) -> Result<i64> {
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    let t = chrono::DateTime::parse_from_rfc3339(s).with_context(|| format!("{s:?} is neither epoch ms nor RFC 3339"))?;
    Ok(t.timestamp_millis())
}

fn report(logs: &[PathBuf], endpoint: &str, vantage: &str, from: Option<&str>, to: Option<&str>, args: &LoadArgs) -> Result<ExitCode> {
    let from = from.map(parse_instant).transpose()?;
    let to = to.map(parse_instant).transpose()?;
    if let (Some(f), Some(t)) = (from, to) {
        if f >= t {
            bail!("--from must be before --to");
        }
    }
    let data = load(logs, args)?;
    let report = quality_report(&data, endpoint, vantage, from, to, &ReportOptions::default())?;
    serde_json::to_writer_pretty(io::stdout().lock(), &report)?;
    println!();
    Ok(ExitCode::SUCCESS)
}
