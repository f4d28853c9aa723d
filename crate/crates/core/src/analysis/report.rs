use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    availability, availability_of, failover_ratios, geofactor, lasting_changes, latency_stats,
    latency_stats_of, resample_daily, score_series, vantage_means, AnalysisError,
    AvailabilityReport, ChangeEvent, Gap, LatencyStats, LoadOutput, Series, Strategy,
    DEFAULT_ALIGNMENT_WINDOW_S, DEFAULT_BIN_WIDTH_MS, DEFAULT_MIN_REL_CHANGE, DEFAULT_PERSISTENCE,
};
use crate::probe::Protocol;
use crate::tlsscan::{classify_suite, SuiteTable};

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub window_s: u64,
    pub bin_width_ms: f64,
    pub min_rel_change: f64,
    pub persistence: usize,
    /// Omit the generation time so repeated runs are byte-identical.
    pub deterministic: bool,
    pub table: SuiteTable,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            window_s: DEFAULT_ALIGNMENT_WINDOW_S,
            bin_width_ms: DEFAULT_BIN_WIDTH_MS,
            min_rel_change: DEFAULT_MIN_REL_CHANGE,
            persistence: DEFAULT_PERSISTENCE,
            deterministic: false,
            table: SuiteTable::builtin(),
        }
    }
}

/// One line of the console summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub endpoint_id: String,
    pub protocol: Protocol,
    pub vantage: String,
    pub records: u64,
    pub gaps: usize,
    pub pingability: Option<f64>,
    pub accessibility: Option<f64>,
    pub successability: Option<f64>,
    pub p90_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
    pub rows: Vec<SummaryRow>,
    pub scans: usize,
    pub quarantined: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolQuality {
    pub protocol: Protocol,
    pub records: usize,
    pub gaps: Vec<Gap>,
    pub availability: Option<AvailabilityReport>,
    pub latency: Option<LatencyStats>,
    /// This vantage's geofactor input.
    pub mean_latency_ms: Option<f64>,
}

/// Aggregates for one endpoint seen from one vantage over a time range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub endpoint_id: String,
    pub vantage: String,
    pub from_ms: Option<i64>,
    pub to_ms: Option<i64>,
    pub protocols: Vec<ProtocolQuality>,
    pub scores: Vec<(i64, f64)>,
    pub lasting_changes: Vec<ChangeEvent>,
}

/// Builds a [`QualityReport`] over `[from_ms, to_ms)`.
pub fn quality_report(
    data: &LoadOutput,
    endpoint_id: &str,
    vantage: &str,
    from_ms: Option<i64>,
    to_ms: Option<i64>,
    options: &ReportOptions,
) -> Result<QualityReport, AnalysisError> {
    let in_range = |t: i64| from_ms.map_or(true, |f| t >= f) && to_ms.map_or(true, |e| t < e);
    let mut protocols = Vec::new();
    for s in data
        .series
        .iter()
        .filter(|s| s.key.endpoint_id == endpoint_id && s.key.vantage == vantage)
    {
        let records: Vec<_> = s.records.iter().filter(|r| in_range(r.timestamp_ms)).cloned().collect();
        let ok: Vec<f64> = records.iter().filter(|r| r.is_success()).map(|r| r.latency_ms).collect();
        protocols.push(ProtocolQuality {
            protocol: s.key.protocol,
            records: records.len(),
            gaps: s
                .gaps
                .iter()
                .filter(|g| in_range(g.start_ms) || in_range(g.end_ms))
                .copied()
                .collect(),
            availability: availability_of(s.key.protocol, &records).ok(),
            latency: latency_stats_of(&ok, options.bin_width_ms).ok(),
            mean_latency_ms: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
        });
    }
    let scores: Vec<(i64, f64)> = score_series(&data.scans)
        .remove(&(endpoint_id.to_string(), vantage.to_string()))
        .unwrap_or_default()
        .into_iter()
        .filter(|p| in_range(p.0))
        .collect();
    if protocols.is_empty() && scores.is_empty() {
        return Err(AnalysisError::NoData(format!("{endpoint_id} from {vantage}")));
    }
    let lasting = lasting_changes(&scores, options.min_rel_change, options.persistence).unwrap_or_default();
    Ok(QualityReport {
        endpoint_id: endpoint_id.to_string(),
        vantage: vantage.to_string(),
        from_ms,
        to_ms,
        protocols,
        scores,
        lasting_changes: lasting,
    })
}

fn io_err(e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io(e.to_string())
}

fn slug(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

struct Csv {
    name: String,
    writer: csv::Writer<fs::File>,
}

impl Csv {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, AnalysisError> {
        let mut writer = csv::Writer::from_path(dir.join(name)).map_err(io_err)?;
        writer.write_record(header).map_err(io_err)?;
        Ok(Csv {
            name: name.to_string(),
            writer,
        })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<(), AnalysisError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(io_err)
    }

    fn finish(mut self, files: &mut Vec<String>) -> Result<(), AnalysisError> {
        self.writer.flush().map_err(io_err)?;
        files.push(self.name);
        Ok(())
    }
}

/// Runs every applicable analysis over `data` and writes tables, plots and an
/// index page into `out_dir`.
pub fn write_report(
    out_dir: &Path,
    data: &LoadOutput,
    options: &ReportOptions,
) -> Result<ReportSummary, AnalysisError> {
    if data.series.is_empty() && data.scans.is_empty() {
        return Err(AnalysisError::NoData("no parseable records".into()));
    }
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let mut files = Vec::new();
    let mut notes = Vec::new();
    let mut rows = Vec::new();

    let mut avail = Csv::create(
        out_dir,
        "availability.csv",
        &[
            "endpoint_id", "protocol", "vantage", "records", "pingability", "accessibility",
            "successability", "packets_sent", "packets_lost", "with_status", "successful",
            "failures", "fail_4xx", "fail_5xx", "fail_none",
        ],
    )?;
    let mut lat = Csv::create(
        out_dir,
        "latency.csv",
        &["endpoint_id", "protocol", "vantage", "count", "mean_ms", "stddev_ms", "p50_ms", "p90_ms", "p99_ms"],
    )?;
    let mut hist = Csv::create(
        out_dir,
        "histogram.csv",
        &["endpoint_id", "protocol", "vantage", "bin_start_ms", "count"],
    )?;
    let mut daily = Csv::create(
        out_dir,
        "daily.csv",
        &["endpoint_id", "protocol", "vantage", "day", "mean_ms", "count"],
    )?;
    let mut gaps = Csv::create(out_dir, "gaps.csv", &["endpoint_id", "protocol", "vantage", "start_ms", "end_ms"])?;

    let mut plots = Vec::new();
    for s in &data.series {
        let k = &s.key;
        let proto = k.protocol.to_string();
        let a = availability(s).ok();
        let l = latency_stats(s, options.bin_width_ms).ok();
        if let Some(a) = &a {
            let d = a.denominators;
            let fd = a.failure_distribution;
            avail.row([
                k.endpoint_id.clone(), proto.clone(), k.vantage.clone(), d.records.to_string(),
                opt(a.pingability), opt(a.accessibility), opt(a.successability),
                d.packets_sent.to_string(), d.packets_lost.to_string(), d.with_status.to_string(),
                d.successful.to_string(), d.failures.to_string(),
                opt(fd.map(|f| f.client_4xx)), opt(fd.map(|f| f.server_5xx)), opt(fd.map(|f| f.none)),
            ])?;
        }
        if let Some(l) = &l {
            lat.row([
                k.endpoint_id.clone(), proto.clone(), k.vantage.clone(), l.count.to_string(),
                l.mean.to_string(), l.stddev.to_string(), l.p50.to_string(), l.p90.to_string(),
                l.p99.to_string(),
            ])?;
            for (bin, count) in &l.histogram {
                hist.row([k.endpoint_id.clone(), proto.clone(), k.vantage.clone(), bin.to_string(), count.to_string()])?;
            }
            let name = format!("histogram_{}.svg", slug(&[&k.endpoint_id, &proto, &k.vantage]));
            plot_histogram(&out_dir.join(&name), &format!("{k} latency"), l).map_err(io_err)?;
            plots.push(name);
        }
        for d in resample_daily(s) {
            daily.row([
                k.endpoint_id.clone(), proto.clone(), k.vantage.clone(), d.day.to_string(),
                d.mean_ms.to_string(), d.count.to_string(),
            ])?;
        }
        for g in &s.gaps {
            gaps.row([k.endpoint_id.clone(), proto.clone(), k.vantage.clone(), g.start_ms.to_string(), g.end_ms.to_string()])?;
        }
        rows.push(SummaryRow {
            endpoint_id: k.endpoint_id.clone(),
            protocol: k.protocol,
            vantage: k.vantage.clone(),
            records: s.records.len() as u64,
            gaps: s.gaps.len(),
            pingability: a.as_ref().and_then(|a| a.pingability),
            accessibility: a.as_ref().and_then(|a| a.accessibility),
            successability: a.as_ref().and_then(|a| a.successability),
            p90_ms: l.map(|l| l.p90),
        });
    }
    for c in [avail, lat, hist, daily, gaps] {
        c.finish(&mut files)?;
    }

    // Daily latency per vantage, one plot per endpoint and protocol.
    let mut groups: BTreeMap<(String, Protocol), Vec<&Series>> = BTreeMap::new();
    for s in &data.series {
        groups.entry((s.key.endpoint_id.clone(), s.key.protocol)).or_default().push(s);
    }
    let mut geo = Csv::create(out_dir, "geofactor.csv", &["endpoint_id", "protocol", "geofactor", "max_vantage", "min_vantage", "excluded"])?;
    for ((ep, proto), members) in &groups {
        let lines: Vec<(String, Vec<(f64, f64)>)> = members
            .iter()
            .map(|s| {
                let pts = resample_daily(s)
                    .iter()
                    .map(|d| (d.day.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() as f64 / 86_400.0, d.mean_ms))
                    .collect();
                (s.key.vantage.clone(), pts)
            })
            .collect();
        if lines.iter().any(|l| !l.1.is_empty()) {
            let name = format!("daily_{}.svg", slug(&[ep, proto.as_str()]));
            plot_lines(&out_dir.join(&name), &format!("{ep} {proto} daily mean latency"), "day (since 1970)", "ms", &lines)
                .map_err(io_err)?;
            plots.push(name);
        }
        if members.len() >= 2 {
            match geofactor(&vantage_means(&data.series, ep, *proto)) {
                Ok(g) => geo.row([
                    ep.clone(), proto.to_string(), g.value.to_string(), g.max_vantage, g.min_vantage,
                    g.excluded.join(";"),
                ])?,
                Err(e) => notes.push(format!("geofactor {ep} {proto}: {e}")),
            }
        }
    }
    geo.finish(&mut files)?;

    let mut fo = Csv::create(out_dir, "failover.csv", &["strategy", "endpoint_id", "failures", "recovered", "unalignable", "ratio"])?;
    let mut fos = Csv::create(out_dir, "failover_summary.csv", &["strategy", "min", "max", "avg", "notes"])?;
    for strategy in Strategy::ALL {
        match failover_ratios(&data.series, strategy, options.window_s) {
            Ok(out) => {
                for e in &out.per_endpoint {
                    fo.row([
                        strategy.to_string(), e.endpoint_id.clone(), e.failures.to_string(),
                        e.recovered.to_string(), e.unalignable.to_string(), opt(e.ratio),
                    ])?;
                }
                fos.row([strategy.to_string(), opt(out.min), opt(out.max), opt(out.avg), out.notes.join("; ")])?;
            }
            Err(e) => notes.push(format!("{strategy}: {e}")),
        }
    }
    fo.finish(&mut files)?;
    fos.finish(&mut files)?;

    let mut sc = Csv::create(out_dir, "scores.csv", &["endpoint_id", "vantage", "timestamp_ms", "server_score"])?;
    let mut lc = Csv::create(
        out_dir,
        "lasting_changes.csv",
        &["endpoint_id", "vantage", "timestamp_ms", "old_score", "new_score", "relative_change", "zero_base"],
    )?;
    let series_scores = score_series(&data.scans);
    let mut by_endpoint: BTreeMap<&str, Vec<(String, Vec<(f64, f64)>)>> = BTreeMap::new();
    for ((ep, v), pts) in &series_scores {
        for (t, s) in pts {
            sc.row([ep.clone(), v.clone(), t.to_string(), s.to_string()])?;
        }
        match lasting_changes(pts, options.min_rel_change, options.persistence) {
            Ok(events) => {
                for e in events {
                    lc.row([
                        ep.clone(), v.clone(), e.timestamp_ms.to_string(), e.old_score.to_string(),
                        e.new_score.to_string(), opt(e.relative_change), e.zero_base.to_string(),
                    ])?;
                }
            }
            Err(e) => notes.push(format!("lasting changes {ep} {v}: {e}")),
        }
        by_endpoint
            .entry(ep)
            .or_default()
            .push((v.clone(), pts.iter().map(|(t, s)| (*t as f64 / 3_600_000.0, *s)).collect()));
    }
    sc.finish(&mut files)?;
    lc.finish(&mut files)?;
    for (ep, lines) in &by_endpoint {
        let name = format!("scores_{}.svg", slug(&[ep]));
        plot_lines(&out_dir.join(&name), &format!("{ep} server security score"), "hours since 1970", "score", lines)
            .map_err(io_err)?;
        plots.push(name);
    }

    let mut suites = Csv::create(out_dir, "suites.csv", &["suite", "occurrences", "score"])?;
    let mut occurrences: BTreeMap<&str, u64> = BTreeMap::new();
    for scan in &data.scans {
        for s in &scan.suites {
            *occurrences.entry(s).or_default() += 1;
        }
    }
    for (name, n) in occurrences {
        let score = classify_suite(&options.table, name).ok().map(|i| i.score);
        suites.row([name.to_string(), n.to_string(), opt(score)])?;
    }
    suites.finish(&mut files)?;

    let mut q = Csv::create(out_dir, "quarantine.csv", &["source", "line", "reason"])?;
    for item in &data.quarantined {
        q.row([item.source.clone(), item.line.to_string(), item.reason.clone()])?;
    }
    q.finish(&mut files)?;

    files.extend(plots.iter().cloned());
    write_index(out_dir, &files, &notes, options.deterministic)?;
    files.push("index.html".into());
    Ok(ReportSummary {
        files,
        rows,
        scans: data.scans.len(),
        quarantined: data.quarantined.len(),
        notes,
    })
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_index(dir: &Path, files: &[String], notes: &[String], deterministic: bool) -> Result<(), AnalysisError> {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>API quality report</title></head><body>\n<h1>API quality report</h1>\n",
    );
    if !deterministic {
        html.push_str(&format!("<p>Generated {}</p>\n", chrono::Utc::now().to_rfc3339()));
    }
    let (tables, images): (Vec<&String>, Vec<&String>) = files.iter().partition(|f| f.ends_with(".csv"));
    html.push_str("<h2>Tables</h2>\n<ul>\n");
    for f in tables {
        html.push_str(&format!("<li><a href=\"{0}\">{0}</a></li>\n", html_escape(f)));
    }
    html.push_str("</ul>\n<h2>Plots</h2>\n");
    for f in images {
        html.push_str(&format!("<figure><img src=\"{0}\" alt=\"{0}\"><figcaption><a href=\"{0}\">{0}</a></figcaption></figure>\n", html_escape(f)));
    }
    if !notes.is_empty() {
        html.push_str("<h2>Notes</h2>\n<ul>\n");
        let uniq: BTreeSet<&String> = notes.iter().collect();
        for n in uniq {
            html.push_str(&format!("<li>{}</li>\n", html_escape(n)));
        }
        html.push_str("</ul>\n");
    }
    html.push_str("</body></html>\n");
    fs::write(dir.join("index.html"), html).map_err(io_err)
}

type PlotResult = Result<(), Box<dyn std::error::Error>>;

fn plot_histogram(path: &Path, title: &str, stats: &LatencyStats) -> PlotResult {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let w = stats.bin_width_ms;
    let x_max = stats.histogram.last().map_or(w, |(b, _)| b + w);
    let y_max = stats.histogram.iter().map(|(_, c)| *c).max().unwrap_or(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max, (0.5f64..y_max * 2.0).log_scale())?;
    chart.configure_mesh().x_desc("latency (ms)").y_desc("count (log)").draw()?;
    chart.draw_series(stats.histogram.iter().map(|(b, c)| {
        Rectangle::new([(*b, 0.5), (b + w, *c as f64)], BLUE.mix(0.6).filled())
    }))?;
    root.present()?;
    Ok(())
}

fn plot_lines(path: &Path, title: &str, x_desc: &str, y_desc: &str, lines: &[(String, Vec<(f64, f64)>)]) -> PlotResult {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let all = lines.iter().flat_map(|l| l.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad_x = ((x1 - x0) * 0.05).max(0.5);
    let pad_y = ((y1 - y0) * 0.1).max(0.1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x0 - pad_x)..(x1 + pad_x), (y0 - pad_y)..(y1 + pad_y))?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
        chart.draw_series(pts.iter().map(|p| Circle::new(*p, 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
