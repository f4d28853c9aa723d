//! Append-only, day-rotated record logs.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate};

use crate::probe::ProbeRecord;
use crate::record::{format_probe, format_scan, CipherScanRecord};

fn day_of(ts_ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(ts_ms)
        .map(|d| d.date_naive())
        .unwrap_or_default()
}

pub fn log_file_name(day: NaiveDate, vantage: &str) -> String {
    format!("{}_{vantage}.log", day.format("%Y-%m-%d"))
}

pub fn scan_file_name(day: NaiveDate, vantage: &str) -> String {
    format!("{}_{vantage}.scan.log", day.format("%Y-%m-%d"))
}

/// Result of checking one log file for a torn trailing line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub path: PathBuf,
    pub quarantine: PathBuf,
    pub bytes: u64,
}

/// Moves an unterminated trailing line into `<file>.quarantine` and cuts the
/// file back to its last complete record.
pub fn recover_log(path: &Path) -> io::Result<Option<Recovery>> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(None);
    }
    // Scan backwards for the last newline.
    let mut pos = len;
    let mut cut = 0u64;
    let mut buf = vec![0u8; 4096];
    'outer: while pos > 0 {
        let n = buf.len().min(pos as usize);
        pos -= n as u64;
        file.seek(SeekFrom::Start(pos))?;
        file.read_exact(&mut buf[..n])?;
        for i in (0..n).rev() {
            if buf[i] == b'\n' {
                cut = pos + i as u64 + 1;
                break 'outer;
            }
        }
    }
    if cut == len {
        return Ok(None);
    }
    let mut tail = Vec::with_capacity((len - cut) as usize);
    file.seek(SeekFrom::Start(cut))?;
    file.read_to_end(&mut tail)?;
    let quarantine = PathBuf::from(format!("{}.quarantine", path.display()));
    let mut q = OpenOptions::new().create(true).append(true).open(&quarantine)?;
    q.write_all(&tail)?;
    q.write_all(b"\n")?;
    q.sync_all()?;
    file.set_len(cut)?;
    file.sync_all()?;
    Ok(Some(Recovery {
        path: path.to_path_buf(),
        quarantine,
        bytes: len - cut,
    }))
}

/// Recovers every log file of `vantage` in `dir`.
pub fn recover_dir(dir: &Path, vantage: &str) -> io::Result<Vec<Recovery>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    let suffixes = [format!("_{vantage}.log"), format!("_{vantage}.scan.log")];
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| suffixes.iter().any(|s| n.ends_with(s.as_str())))
        })
        .collect();
    paths.sort();
    for p in paths {
        if let Some(r) = recover_log(&p)? {
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Open {
    day: Option<NaiveDate>,
    file: Option<File>,
}

impl Open {
    fn append(&mut self, dir: &Path, name: impl Fn(NaiveDate) -> String, day: NaiveDate, line: &str) -> io::Result<()> {
        if self.day != Some(day) || self.file.is_none() {
            let path = dir.join(name(day));
            recover_log(&path)?;
            self.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
            self.day = Some(day);
        }
        let file = self.file.as_mut().expect("opened above");
        let mut bytes = Vec::with_capacity(line.len() + 1);
        bytes.extend_from_slice(line.as_bytes());
        bytes.push(b'\n');
        let res = file.write_all(&bytes).and_then(|_| file.flush());
        if res.is_err() {
            // Reopen (and recover) next time.
            self.file = None;
        }
        res
    }
}

/// Serialized writer for one vantage's probe and scan logs.
pub struct LogWriter {
    dir: PathBuf,
    vantage: String,
    probes: Mutex<Open>,
    scans: Mutex<Open>,
}

impl LogWriter {
    pub fn new(dir: impl Into<PathBuf>, vantage: impl Into<String>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LogWriter {
            dir,
            vantage: vantage.into(),
            probes: Mutex::new(Open::default()),
            scans: Mutex::new(Open::default()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn probe_path(&self, ts_ms: i64) -> PathBuf {
        self.dir.join(log_file_name(day_of(ts_ms), &self.vantage))
    }

    pub fn scan_path(&self, ts_ms: i64) -> PathBuf {
        self.dir.join(scan_file_name(day_of(ts_ms), &self.vantage))
    }

    pub fn append_probe(&self, r: &ProbeRecord) -> io::Result<()> {
        let line = format_probe(r);
        let v = self.vantage.clone();
        self.probes
            .lock()
            .expect("probe log lock")
            .append(&self.dir, move |d| log_file_name(d, &v), day_of(r.timestamp_ms), &line)
    }

    pub fn append_scan(&self, r: &CipherScanRecord) -> io::Result<()> {
        let line = format_scan(r);
        let v = self.vantage.clone();
        self.scans
            .lock()
            .expect("scan log lock")
            .append(&self.dir, move |d| scan_file_name(d, &v), day_of(r.timestamp_ms), &line)
    }
}
