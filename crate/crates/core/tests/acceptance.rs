//! Acceptance criteria, one pass/fail line each on stderr.
//!
//! Run with `cargo test -p apiq-core --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apiq_core::analysis::{
    availability_of, failover_ratios, geofactor, lasting_changes, latency_stats, load_series, quality_report,
    series_from_records, vantage_means, AvailabilityReport, ReportOptions, Series, Strategy,
};
use apiq_core::mocknet::{expected_report, serve, Behavior, FaultPlan, FaultWindow, MockOptions, MockServer, ProbeSchedule};
use apiq_core::now_ms;
use apiq_core::probe::{classify_outcome, EndpointSpec, FailureKind, ProbeRecord, Protocol};
use apiq_core::record::parse_probe;
use apiq_core::runner::{self, series_phases, EchoBackendKind, NetworkExecutor, RunConfig, RunOptions};
use apiq_core::tlsscan::{
    classify_suite, enumerate_suites, is_tls13_suite, score_server, score_suite, suite_code, ScanOptions, SuiteTable,
    KNOWN_SUITES,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- scores

fn security_score_fidelity() -> Outcome {
    let table = SuiteTable::builtin();
    let names = ["ECDHE-RSA-AES256-SHA384", "ECDHE-ECDSA-AES128-SHA", "RC4-SHA"];
    let expected = [1.1, 1.0, -1.0];
    for (n, e) in names.iter().zip(expected) {
        let s = score_suite(&table, n).map_err(|e| e.to_string())?;
        check(s == e, || format!("{n} scored {s}, want {e}"))?;
    }
    let infos: Vec<_> = names.iter().map(|n| classify_suite(&table, n).unwrap()).collect();
    let server = score_server(&infos).map_err(|e| e.to_string())?;
    check(close(server, 1.267, 0.001), || format!("server score {server}"))?;
    let reversed: Vec<_> = infos.iter().rev().cloned().collect();
    let rev = score_server(&reversed).map_err(|e| e.to_string())?;
    check(close(rev, -1.0 + 0.5 + 1.1 / 3.0, 1e-12), || format!("reversed score {rev}"))?;
    Ok(format!("server score {server:.4}, suites 1.1/1.0/-1"))
}

fn table_coverage() -> Outcome {
    let table = SuiteTable::builtin();
    let rows = [
        ("DHE-RSA-CAMELLIA256-SHA", 1.1),
        ("DHE-RSA-CAMELLIA128-SHA", 1.0),
        ("CAMELLIA256-SHA", 0.1),
        ("CAMELLIA128-SHA", 0.0),
        ("ECDHE-RSA-RC4-SHA", -1.0),
        ("RC4-MD5", -1.0),
        ("ECDHE-RSA-AES256-SHA384", 1.1),
        ("ECDHE-ECDSA-AES128-SHA", 1.0),
        ("RC4-SHA", -1.0),
    ];
    for (name, want) in rows {
        let got = score_suite(&table, name).map_err(|e| format!("{name}: {e}"))?;
        check(got == want, || format!("{name} scored {got}, want {want}"))?;
    }
    Ok(format!("{} named suites scored exactly", rows.len()))
}

// ---------------------------------------------------------------- oracle equivalence

const PLANS: u64 = 20;

fn random_plan(seed: u64) -> FaultPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::new();
    let mut start = 0;
    for _ in 0..rng.gen_range(3..=6) {
        let duration_s = rng.gen_range(2..=4);
        let behavior = match rng.gen_range(0..6) {
            0 => Behavior::Ok {
                status: *[200, 204, 301, 302].choose(&mut rng).unwrap(),
                body_bytes: rng.gen_range(0..4096),
                delay_ms: rng.gen_range(0..80),
            },
            1 => Behavior::Status(*[404, 418, 500, 503].choose(&mut rng).unwrap()),
            2 => Behavior::Timeout,
            3 => Behavior::Reset,
            4 => Behavior::DropTls,
            _ => Behavior::PacketLoss(rng.gen_range(1..=9) as f64 / 10.0),
        };
        windows.push(FaultWindow {
            start_offset_s: start,
            duration_s,
            behavior,
        });
        start += duration_s;
    }
    let tls_preference = match rng.gen_range(0..5) {
        // A suite the mock completes with its own certificate.
        0 => Some(vec!["ECDHE-ECDSA-AES128-GCM-SHA256".to_string(), "AES128-SHA".to_string()]),
        // One it can only announce: every handshake fails.
        1 => Some(vec!["ECDHE-RSA-AES128-GCM-SHA256".to_string(), "TLS_AES_128_GCM_SHA256".to_string()]),
        _ => None,
    };
    let mut plan = FaultPlan::new(windows).expect("valid plan");
    plan.tls_preference = tls_preference;
    plan.seed = Some(seed * 7919 + 1);
    plan
}

fn write_mock_config(dir: &Path, mock: &MockServer, vantage: &str, ids: &[&str], interval_s: u64, stagger: bool) -> RunConfig {
    let pem = dir.join("mock.pem");
    fs::write(&pem, mock.cert_pem()).unwrap();
    let mut c = RunConfig::new(vantage);
    c.endpoints = ids
        .iter()
        .map(|id| {
            EndpointSpec::new(
                id.to_string(),
                format!("127.0.0.1:{}/{id}", mock.port()),
                [Protocol::Icmp, Protocol::Http, Protocol::Https],
            )
            .unwrap()
        })
        .collect();
    c.probe_interval_s = interval_s;
    c.scan_interval_s = 3600;
    c.stagger = stagger;
    c.timeout_ms = 400;
    c.log_dir = dir.join("logs");
    c.health_port = 0;
    c.echo_backend = EchoBackendKind::Udp;
    c.echo_timeout_ms = 50;
    c.extra_root_pem = Some(pem);
    c
}

fn log_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.retain(|p| p.to_string_lossy().ends_with(".log"));
    v.sort();
    v
}

fn compare_reports(what: &str, got: &AvailabilityReport, want: &AvailabilityReport) -> Result<(), String> {
    let eq = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => close(x, y, 1e-9),
        (None, None) => true,
        _ => false,
    };
    check(got.denominators == want.denominators, || {
        format!("{what}: denominators {:?} vs oracle {:?}", got.denominators, want.denominators)
    })?;
    check(
        eq(got.pingability, want.pingability)
            && eq(got.accessibility, want.accessibility)
            && eq(got.successability, want.successability),
        || format!("{what}: analysis {got:?} vs oracle {want:?}"),
    )?;
    let fd = |r: &AvailabilityReport| r.failure_distribution.map(|f| [f.client_4xx, f.server_5xx, f.none]);
    let same_fd = match (fd(got), fd(want)) {
        (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| close(*x, y, 1e-9)),
        (None, None) => true,
        _ => false,
    };
    check(same_fd, || format!("{what}: failure distribution {:?} vs {:?}", got.failure_distribution, want.failure_distribution))
}

fn one_plan(seed: u64) -> Result<usize, String> {
    let plan = random_plan(seed);
    let span_ms = plan.span_s() as i64 * 1000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let epoch = (now_ms() / 1000 + 2) * 1000;
    let mock = serve(
        plan.clone(),
        0,
        MockOptions {
            epoch_ms: Some(epoch),
            ..MockOptions::default()
        },
    )
    .map_err(|e| format!("mock: {e}"))?;
    let config = write_mock_config(dir.path(), &mock, "lab", &["m"], 1, false);
    let log_dir = config.log_dir.clone();
    let executor = NetworkExecutor::from_config(&config).map_err(|e| e.to_string())?;
    let handle = runner::start(
        config,
        Arc::new(executor),
        RunOptions {
            epoch_ms: epoch + 500,
            scans: false,
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    while now_ms() < epoch + span_ms + 700 {
        thread::sleep(Duration::from_millis(100));
    }
    handle.shutdown().map_err(|e| e.to_string())?;
    mock.shutdown();

    let data = load_series(&log_files(&log_dir), 1, 2.0).map_err(|e| e.to_string())?;
    let report = quality_report(&data, "m", "lab", Some(epoch), Some(epoch + span_ms), &ReportOptions::default())
        .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for protocol in [Protocol::Icmp, Protocol::Http, Protocol::Https] {
        let series = data
            .series
            .iter()
            .find(|s| s.key.protocol == protocol)
            .ok_or_else(|| format!("plan {seed}: no {protocol} series"))?;
        let offsets: Vec<i64> = series
            .records
            .iter()
            .map(|r| r.timestamp_ms - epoch)
            .filter(|o| (0..span_ms).contains(o))
            .collect();
        check(offsets.len() as i64 == span_ms / 1000, || {
            format!("plan {seed}: {protocol} has {} records in a {} s plan", offsets.len(), span_ms / 1000)
        })?;
        let want = expected_report(
            &plan,
            &ProbeSchedule {
                protocol,
                offsets_ms: offsets,
                packet_count: 5,
            },
        )
        .map_err(|e| e.to_string())?;
        let got = report
            .protocols
            .iter()
            .find(|p| p.protocol == protocol)
            .and_then(|p| p.availability.clone())
            .ok_or_else(|| format!("plan {seed}: no availability for {protocol}"))?;
        compare_reports(&format!("plan {seed} {protocol} ({})", plan.to_text().replace('\n', " ")), &got, &want)?;
        compared += 1;
    }
    Ok(compared)
}

fn oracle_equivalence() -> Outcome {
    let workers: Vec<_> = (0..PLANS)
        .map(|seed| thread::spawn(move || one_plan(seed)))
        .collect();
    let mut reports = 0;
    let mut errors = Vec::new();
    for w in workers {
        match w.join() {
            Ok(Ok(n)) => reports += n,
            Ok(Err(e)) => errors.push(e),
            Err(_) => errors.push("plan thread panicked".into()),
        }
    }
    if errors.is_empty() {
        Ok(format!("{PLANS} seeded plans, {reports} availability reports equal to the oracle"))
    } else {
        Err(errors.join("; "))
    }
}

// ---------------------------------------------------------------- preference recovery

fn preference_recovery() -> Outcome {
    let table = SuiteTable::builtin();
    let candidates: Vec<&str> = KNOWN_SUITES
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| table.get(n).is_some())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut recovered = 0;
    for round in 0..5 {
        let k = rng.gen_range(3..=10);
        let mut pick: Vec<&str> = candidates.choose_multiple(&mut rng, k).copied().collect();
        // A TLS 1.3 capable server answers 1.3 offers first.
        pick.sort_by_key(|n| !is_tls13_suite(suite_code(n).unwrap()));
        let order: Vec<String> = pick.iter().map(|s| s.to_string()).collect();
        let mut plan = FaultPlan::default();
        plan.tls_preference = Some(order.clone());
        let mock = serve(plan, 0, MockOptions::default()).map_err(|e| e.to_string())?;
        let endpoint = EndpointSpec::new("p", format!("127.0.0.1:{}/", mock.port()), [Protocol::Https]).unwrap();
        let got = enumerate_suites(
            &endpoint,
            &ScanOptions {
                timeout: Duration::from_secs(2),
                table: table.clone(),
            },
        )
        .map_err(|e| format!("round {round}: {e}"))?;
        mock.shutdown();
        check(got.suites == order, || format!("round {round}: configured {order:?}, recovered {:?}", got.suites))?;
        recovered += 1;
    }
    Ok(format!("{recovered}/5 orders recovered exactly"))
}

// ---------------------------------------------------------------- lasting changes

fn brute_lasting(xs: &[f64], min_rel: f64, persistence: usize) -> Vec<usize> {
    let near = |x: f64, t: f64| if t == 0.0 { x == 0.0 } else { ((x - t) / t).abs() < min_rel };
    let mut out = Vec::new();
    for i in 1..xs.len() {
        let (old, new) = (xs[i - 1], xs[i]);
        let moved = if old == 0.0 { new != 0.0 } else { ((new - old) / old).abs() >= min_rel };
        if !moved || i + persistence >= xs.len() {
            continue;
        }
        if !(1..=persistence).all(|k| near(xs[i + k], new)) {
            continue;
        }
        // Level in force before i: latest point that was steady relative to its predecessor.
        let mut k = i - 1;
        while k > 0 && !near(xs[k], xs[k - 1]) {
            k -= 1;
        }
        if near(new, xs[k]) {
            continue;
        }
        out.push(i);
    }
    out
}

fn constructed_series(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(15..80);
    let mut level = rng.gen_range(0.5..2.0);
    let mut xs = Vec::with_capacity(n);
    let kind = rng.gen_range(0..3);
    while xs.len() < n {
        match kind {
            // steps
            0 => {
                let hold = rng.gen_range(5..16);
                for _ in 0..hold {
                    xs.push(level);
                }
                level *= 1.0 + rng.gen_range(-0.05..0.05);
            }
            // spikes on a flat line
            1 => {
                xs.push(if rng.gen_bool(0.15) { level * rng.gen_range(0.7..1.4) } else { level });
            }
            // drift
            _ => {
                level *= 1.0 + rng.gen_range(-0.012..0.012);
                xs.push(level);
            }
        }
    }
    xs.truncate(n);
    xs
}

fn lasting_change_detector() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut events = 0;
    for case in 0..100 {
        let xs = constructed_series(&mut rng);
        let pts: Vec<(i64, f64)> = xs.iter().enumerate().map(|(i, x)| (i as i64, *x)).collect();
        let got: Vec<usize> = lasting_changes(&pts, 0.01, 10)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|e| e.timestamp_ms as usize)
            .collect();
        let want = brute_lasting(&xs, 0.01, 10);
        check(got == want, || format!("series {case}: detector {got:?}, brute force {want:?}, data {xs:?}"))?;
        events += got.len();
    }
    let held = |n: usize| {
        let mut xs = vec![1.0; 5];
        xs.extend(std::iter::repeat(1.01).take(n + 1));
        let pts: Vec<(i64, f64)> = xs.iter().enumerate().map(|(i, x)| (i as i64, *x)).collect();
        lasting_changes(&pts, 0.01, 10).unwrap().len()
    };
    check(held(9) == 0 && held(10) == 1, || format!("held 9 -> {}, held 10 -> {}", held(9), held(10)))?;
    Ok(format!("100 series match brute force ({events} events); 1% step held 9 -> 0, held 10 -> 1"))
}

// ---------------------------------------------------------------- failover

fn record(endpoint: &str, vantage: &str, protocol: Protocol, ts: i64, ok: bool) -> ProbeRecord {
    ProbeRecord {
        timestamp_ms: ts,
        vantage: vantage.into(),
        endpoint_id: endpoint.into(),
        protocol,
        latency_ms: 10.0,
        outcome: if ok {
            classify_outcome(Some(200), None).unwrap()
        } else {
            classify_outcome(None, Some(FailureKind::Timeout)).unwrap()
        },
        bytes: 0,
        packets_sent: None,
        packets_lost: None,
    }
}

const SLOT_MS: i64 = 300_000;

/// Trace where `n` failures of the primary series have `r` rescues. For a
/// region change the unrescued slots fail in both regions, so the other
/// region contributes `n - r` unrescued failures of its own.
fn failover_trace(endpoint: &str, strategy: Strategy, n: usize, r: usize) -> Vec<ProbeRecord> {
    let mut out = Vec::new();
    for slot in 0..60usize {
        let ts = slot as i64 * SLOT_MS;
        let fail_slot = slot % 3 == 1 && slot / 3 < n;
        let rescued = fail_slot && slot / 3 < r;
        for vantage in ["A", "B"] {
            for protocol in [Protocol::Http, Protocol::Https] {
                let primary = match strategy {
                    Strategy::RegionChange => vantage == "A" && protocol == Protocol::Http,
                    Strategy::Http2Https => protocol == Protocol::Http,
                    Strategy::Https2Http => protocol == Protocol::Https,
                };
                let counterpart_of_primary = match strategy {
                    Strategy::RegionChange => vantage == "B" && protocol == Protocol::Http,
                    Strategy::Http2Https => protocol == Protocol::Https,
                    Strategy::Https2Http => protocol == Protocol::Http,
                };
                let ok = if primary {
                    !fail_slot
                } else if counterpart_of_primary {
                    !fail_slot || rescued
                } else {
                    true
                };
                out.push(record(endpoint, vantage, protocol, ts, ok));
            }
        }
    }
    out
}

fn brute_failover(series: &[Series], strategy: Strategy, window_ms: i64) -> BTreeMap<String, (u64, u64)> {
    let mut per: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for s in series.iter().filter(|s| s.key.protocol != Protocol::Icmp) {
        let counterparts: Vec<&Series> = series
            .iter()
            .filter(|o| o.key.endpoint_id == s.key.endpoint_id && o.key.protocol != Protocol::Icmp)
            .filter(|o| match strategy {
                Strategy::RegionChange => o.key.protocol == s.key.protocol && o.key.vantage != s.key.vantage,
                Strategy::Http2Https => {
                    s.key.protocol == Protocol::Http && o.key.protocol == Protocol::Https && o.key.vantage == s.key.vantage
                }
                Strategy::Https2Http => {
                    s.key.protocol == Protocol::Https && o.key.protocol == Protocol::Http && o.key.vantage == s.key.vantage
                }
            })
            .collect();
        if counterparts.is_empty() {
            continue;
        }
        for f in s.records.iter().filter(|r| !r.outcome.is_success()) {
            let near: Vec<&ProbeRecord> = counterparts
                .iter()
                .flat_map(|c| c.records.iter())
                .filter(|c| (c.timestamp_ms - f.timestamp_ms).abs() <= window_ms)
                .collect();
            if near.is_empty() {
                continue;
            }
            let e = per.entry(s.key.endpoint_id.clone()).or_default();
            e.0 += 1;
            if near.iter().any(|c| c.outcome.is_success()) {
                e.1 += 1;
            }
        }
    }
    per
}

fn failover_fractions() -> Outcome {
    // (failures n, rescues r) giving each target fraction.
    let protocol_cases = [(0.0, 10, 0), (0.5, 10, 5), (0.9, 10, 9), (1.0, 10, 10)];
    // Region change: r / (2n - r).
    let region_cases = [(0.0, 5, 0), (0.5, 3, 2), (0.9, 19, 18), (1.0, 10, 10)];
    let mut checked = 0;
    for strategy in Strategy::ALL {
        let cases = if strategy == Strategy::RegionChange { region_cases } else { protocol_cases };
        let mut records = Vec::new();
        for (i, (_, n, r)) in cases.iter().enumerate() {
            records.extend(failover_trace(&format!("e{i}"), strategy, *n, *r));
        }
        let (series, _) = series_from_records(records, 300, 2.0).map_err(|e| e.to_string())?;
        let outcome = failover_ratios(&series, strategy, 150).map_err(|e| e.to_string())?;
        let brute = brute_failover(&series, strategy, 150_000);
        for (i, (target, _, _)) in cases.iter().enumerate() {
            let id = format!("e{i}");
            let got = outcome
                .per_endpoint
                .iter()
                .find(|e| e.endpoint_id == id)
                .and_then(|e| e.ratio)
                .ok_or_else(|| format!("{strategy} {id}: no ratio"))?;
            let (bf, br) = brute[&id];
            let brute_ratio = br as f64 / bf as f64;
            check(got == *target && brute_ratio == *target, || {
                format!("{strategy} {id}: ratio {got}, brute force {brute_ratio}, target {target}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (strategy, endpoint) ratios equal {{0, 0.5, 0.9, 1.0}} and brute force"))
}

// ---------------------------------------------------------------- gap honesty

fn gap_honesty() -> Outcome {
    let records: Vec<ProbeRecord> = (0..500)
        .filter(|i| !(200..230).contains(i))
        .map(|i| record("e", "v", Protocol::Http, i * SLOT_MS, true))
        .collect();
    let (series, _) = series_from_records(records, 300, 2.0).map_err(|e| e.to_string())?;
    let s = &series[0];
    let a = availability_of(Protocol::Http, &s.records).map_err(|e| e.to_string())?;
    check(a.accessibility == Some(1.0) && a.successability == Some(1.0), || format!("{a:?}"))?;
    check(s.gaps.len() == 1, || format!("gaps {:?}", s.gaps))?;
    let g = s.gaps[0];
    check(g.start_ms == 199 * SLOT_MS && g.end_ms == 230 * SLOT_MS, || format!("gap {g:?}"))?;
    Ok("30 dropped records: accessibility 1.0, one gap [199, 230] slots".into())
}

// ---------------------------------------------------------------- geofactor & percentiles

fn geofactor_and_percentiles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..50 {
        let vantages = rng.gen_range(2..=5);
        let mut records = Vec::new();
        let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for v in 0..vantages {
            let base = rng.gen_range(10.0..300.0);
            for i in 0..rng.gen_range(1..400) {
                let mut r = record("e", &format!("v{v}"), Protocol::Https, i * SLOT_MS, true);
                r.latency_ms = (base * rng.gen_range(0.5..3.0) * 1000.0_f64).round() / 1000.0;
                raw.entry(format!("v{v}")).or_default().push(r.latency_ms);
                records.push(r);
            }
        }
        let (series, _) = series_from_records(records, 300, 2.0).map_err(|e| e.to_string())?;
        let g = geofactor(&vantage_means(&series, "e", Protocol::Https)).map_err(|e| e.to_string())?;
        let means: Vec<f64> = raw.values().map(|xs| xs.iter().sum::<f64>() / xs.len() as f64).collect();
        let want = means.iter().cloned().fold(f64::MIN, f64::max) / means.iter().cloned().fold(f64::MAX, f64::min);
        check(close(g.value, want, 1e-9), || format!("trial {trial}: geofactor {} vs {want}", g.value))?;
        for s in &series {
            let stats = latency_stats(s, 50.0).map_err(|e| e.to_string())?;
            let mut xs = raw[&s.key.vantage].clone();
            xs.sort_by(f64::total_cmp);
            // Smallest value with at least 90% of samples at or below it.
            let p90 = *xs
                .iter()
                .find(|x| xs.iter().filter(|y| *y <= *x).count() * 10 >= xs.len() * 9)
                .unwrap();
            check(close(stats.p90, p90, 1e-9), || format!("trial {trial} {}: p90 {} vs {p90}", s.key, stats.p90))?;
        }
    }
    let same = geofactor(&[("a".into(), Some(42.5)), ("b".into(), Some(42.5)), ("c".into(), Some(42.5))])
        .map_err(|e| e.to_string())?;
    check(same.value == 1.0, || format!("identical means gave {}", same.value))?;
    Ok("50 randomized traces match brute force to 1e-9; identical means give 1.0".into())
}

// ---------------------------------------------------------------- runner liveness

fn runner_liveness() -> Outcome {
    let interval_s = 5;
    let run = Duration::from_secs(120);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mock = serve(FaultPlan::default(), 0, MockOptions::default()).map_err(|e| e.to_string())?;
    let config = write_mock_config(dir.path(), &mock, "live", &["alpha", "beta"], interval_s, true);
    let phases = series_phases(&config);
    let log_dir = config.log_dir.clone();
    let epoch = (now_ms() / 1000 + 1) * 1000;
    let executor = NetworkExecutor::from_config(&config).map_err(|e| e.to_string())?;
    let handle = runner::start(
        config,
        Arc::new(executor),
        RunOptions {
            epoch_ms: epoch,
            scans: false,
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let started = Instant::now();
    while started.elapsed() < run {
        thread::sleep(Duration::from_millis(200));
    }
    // Freeze scheduling and let in-flight probes land before comparing.
    handle.pause();
    thread::sleep(Duration::from_millis(1500));
    let snapshot = handle.snapshot();
    let body = http_get(handle.health_addr(), "/health").map_err(|e| e.to_string())?;
    handle.shutdown().map_err(|e| e.to_string())?;
    mock.shutdown();
    check(body.starts_with("HTTP/1.1 200") && body.contains("<table"), || "health page not served".into())?;

    let mut by_series: BTreeMap<(String, Protocol), Vec<ProbeRecord>> = BTreeMap::new();
    for f in log_files(&log_dir) {
        for line in fs::read_to_string(&f).map_err(|e| e.to_string())?.lines() {
            let r = parse_probe(line).map_err(|e| e.to_string())?;
            by_series.entry((r.endpoint_id.clone(), r.protocol)).or_default().push(r);
        }
    }
    check(by_series.len() == 6, || format!("{} series logged", by_series.len()))?;
    let mut observed_phases = HashSet::new();
    let mut counts = Vec::new();
    for ((id, protocol), recs) in &by_series {
        let n = recs.len();
        counts.push(n);
        check((23..=25).contains(&n), || format!("{id}/{protocol}: {n} records"))?;
        let want_phase = phases
            .iter()
            .find(|(s, _)| s.endpoint_id == *id && s.protocol == *protocol)
            .map(|p| p.1 as i64)
            .unwrap();
        for r in recs {
            let phase = (r.timestamp_ms - epoch).rem_euclid(interval_s as i64 * 1000);
            check((phase - want_phase).rem_euclid(5000) < 100, || {
                format!("{id}/{protocol}: fired at phase {phase}, configured {want_phase}")
            })?;
        }
        observed_phases.insert(want_phase);
        let last = recs.last().unwrap();
        let h = snapshot
            .get(id, *protocol)
            .ok_or_else(|| format!("{id}/{protocol} missing from health"))?;
        check(h.last_timestamp_ms == last.timestamp_ms && h.last_outcome == last.outcome.class, || {
            format!("{id}/{protocol}: health {} vs log tail {}", h.last_timestamp_ms, last.timestamp_ms)
        })?;
        check(h.records == n as u64, || format!("{id}/{protocol}: health counted {} of {n}", h.records))?;
    }
    check(observed_phases.len() == 6, || "phases collide".into())?;
    Ok(format!("per-series counts {counts:?}, 6 distinct phases, health equals log tail"))
}

fn http_get(addr: std::net::SocketAddr, path: &str) -> std::io::Result<String> {
    use std::io::Read;
    let mut s = std::net::TcpStream::connect_timeout(&addr, Duration::from_secs(1))?;
    s.set_read_timeout(Some(Duration::from_secs(2)))?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\n\r\n")?;
    let mut out = String::new();
    s.read_to_string(&mut out)?;
    Ok(out)
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("Security score fidelity", security_score_fidelity),
        ("Classification table coverage", table_coverage),
        ("Oracle equivalence", oracle_equivalence),
        ("Preference recovery", preference_recovery),
        ("Lasting-change detector", lasting_change_detector),
        ("Failover ratios", failover_fractions),
        ("Gap honesty", gap_honesty),
        ("Geofactor & percentiles", geofactor_and_percentiles),
        ("Runner liveness", runner_liveness),
    ];
    // Independent criteria run side by side; the two long ones dominate.
    let handles: Vec<_> = criteria
        .iter()
        .map(|(name, f)| {
            let f = *f;
            let name = *name;
            thread::spawn(move || {
                let t = Instant::now();
                let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
                (name, r, t.elapsed())
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mut stderr = std::io::stderr().lock();
    let mut failed = 0;
    for (name, r, took) in &results {
        match r {
            Ok(detail) => writeln!(stderr, "[PASS] {name} ({:.1} s): {detail}", took.as_secs_f64()).unwrap(),
            Err(why) => {
                failed += 1;
                writeln!(stderr, "[FAIL] {name} ({:.1} s): {why}", took.as_secs_f64()).unwrap();
            }
        }
    }
    writeln!(stderr, "acceptance: {} passed, {failed} failed", results.len() - failed).unwrap();
    assert_eq!(failed, 0, "acceptance criteria failed");
}
