//! Raw sensor log: one row per synchronized gyroscope/magnetometer sample.
//!
//! File format is CSV with the exact header `t,gx,gy,gz,mx,my,mz`: time in
//! seconds, gyro in rad/s (raw, uncalibrated), magnetometer in raw units.
//! The gyro value in row `k` is taken to be the mean angular rate over
//! `[t_k, t_{k+1}]`, which is how the simulator writes it.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rotation::Vec3;

pub const LOG_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "mx", "my", "mz"];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log: cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("log: malformed header {found:?}, expected \"t,gx,gy,gz,mx,my,mz\"")]
    MalformedHeader { found: String },
    #[error("log: empty file (no data rows)")]
    Empty,
    #[error("log: line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("log: line {line}: non-finite value in column {column}")]
    NonFinite { line: u64, column: &'static str },
    #[error("log: line {line}: timestamp {t} does not increase (previous {previous})")]
    NonMonotonic { line: u64, t: f64, previous: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub gyro: Vec3,
    pub mag: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawLog {
    pub samples: Vec<LogSample>,
    pub sample_rate_hint: Option<f64>,
    pub source: String,
}

impl RawLog {
    pub fn new(samples: Vec<LogSample>, source: impl Into<String>) -> Self {
        let sample_rate_hint = median_rate(&samples);
        Self {
            samples,
            sample_rate_hint,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn gyro(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.gyro).collect()
    }

    pub fn mag(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.mag).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Index of the first sample whose timestamp does not increase.
    pub fn first_non_monotonic(&self) -> Option<usize> {
        self.samples
            .windows(2)
            .position(|w| !(w[1].t > w[0].t))
            .map(|i| i + 1)
    }

    /// Sub-log with samples in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> RawLog {
        RawLog {
            samples: self.samples[range].to_vec(),
            sample_rate_hint: self.sample_rate_hint,
            source: self.source.clone(),
        }
    }
}

fn median_rate(samples: &[LogSample]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut dts: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    dts.sort_by(f64::total_cmp);
    let dt = dts[dts.len() / 2];
    (dt > 0.0).then(|| 1.0 / dt)
}

pub fn parse_log(path: impl AsRef<Path>) -> Result<RawLog, LogError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let mut log = parse_log_str(&text)?;
    log.source = path.display().to_string();
    Ok(log)
}

pub fn parse_log_str(text: &str) -> Result<RawLog, LogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| LogError::MalformedHeader {
            found: e.to_string(),
        })?
        .clone();
    if header.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(LogError::MalformedHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LogError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut values = [0.0; 7];
        for (i, column) in LOG_HEADER.iter().enumerate() {
            let field = record.get(i).unwrap_or_default();
            let v: f64 = field.parse().map_err(|_| LogError::MalformedRow {
                line,
                message: format!("cannot parse {column} value {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(LogError::NonFinite { line, column });
            }
            values[i] = v;
        }
        if let Some(prev) = samples.last().map(|s: &LogSample| s.t) {
            if values[0] <= prev {
                return Err(LogError::NonMonotonic {
                    line,
                    t: values[0],
                    previous: prev,
                });
            }
        }
        samples.push(LogSample {
            t: values[0],
            gyro: Vec3::new(values[1], values[2], values[3]),
            mag: Vec3::new(values[4], values[5], values[6]),
        });
    }
    if samples.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(RawLog::new(samples, ""))
}

/// Writes the log with 17 significant digits so parsing reproduces every
/// value bit for bit.
pub fn write_log<W: Write>(log: &RawLog, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for s in &log.samples {
        let row = [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.mag.x, s.mag.y, s.mag.z];
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()
}

pub fn write_log_file(log: &RawLog, path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(File::create(path)?);
    write_log(log, file)
}
