//! Metrics CSV: one row per inner update (phases D and V) plus periodic
//! evaluation rows (phase E).
//!
//! The header is fixed. Objective columns are empty on E rows; accuracy
//! columns are empty on D and V rows. `inner` is the 1-based update index
//! within the outer step (D updates come first, the V update last); E rows
//! use inner = 0 since they record no update. The `ms` column is populated
//! only when timing is enabled, because wall-clock values would break
//! byte-identical reruns.

use crate::error::{Error, Result};
use crate::knn::EvalReport;
use std::fmt;
use std::io::Write;
use std::path::Path;

pub const HEADER: &str =
    "step,inner,phase,tau,dr_z,dr_zhat,pairwise_sum,sigma_mean,acc_netd,acc_netg,gap,draw_id,ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    D,
    V,
    E,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::D => "D",
            Phase::V => "V",
            Phase::E => "E",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "D" => Ok(Phase::D),
            "V" => Ok(Phase::V),
            "E" => Ok(Phase::E),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub inner: u64,
    pub phase: Phase,
    pub tau: Option<f64>,
    pub dr_z: Option<f64>,
    pub dr_zhat: Option<f64>,
    pub pairwise_sum: Option<f64>,
    pub sigma_mean: Option<f64>,
    pub acc_netd: Option<f64>,
    pub acc_netg: Option<f64>,
    pub gap: Option<f64>,
    pub draw_id: Option<u64>,
    pub ms: Option<u64>,
}

impl MetricsRow {
    pub fn eval(report: &EvalReport, ms: Option<u64>) -> Self {
        MetricsRow {
            step: report.step,
            inner: 0,
            phase: Phase::E,
            tau: None,
            dr_z: None,
            dr_zhat: None,
            pairwise_sum: None,
            sigma_mean: None,
            acc_netd: Some(report.acc_netd),
            acc_netg: Some(report.acc_netg),
            gap: Some(report.gap),
            draw_id: Some(report.draw_id),
            ms,
        }
    }

    /// Render as one CSV line, without the trailing newline. Floats use the
    /// shortest decimal form that round-trips, so equal values always render
    /// to equal bytes.
    pub fn render(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.inner,
            self.phase,
            opt(&self.tau),
            opt(&self.dr_z),
            opt(&self.dr_zhat),
            opt(&self.pairwise_sum),
            opt(&self.sigma_mean),
            opt(&self.acc_netd),
            opt(&self.acc_netg),
            opt(&self.gap),
            opt(&self.draw_id),
            opt(&self.ms),
        )
    }
}

/// Receives rows as training produces them. The trainer flushes the sink
/// before propagating any abort so partial metrics survive.
pub trait MetricsSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()>;
    fn flush(&mut self) -> Result<()>;
}

/// In-memory sink for tests and library callers.
#[derive(Debug, Default)]
pub struct VecSink {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSink for VecSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Buffered CSV file sink; writes the header on creation.
pub struct CsvSink {
    path: std::path::PathBuf,
    writer: std::io::BufWriter<std::fs::File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        writeln!(writer, "{HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            writer,
        })
    }
}

impl MetricsSink for CsvSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.writer, "{}", row.render()).map_err(|e| Error::io(&self.path, e))
    }
    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parse a metrics CSV produced by `CsvSink`. Line numbers in errors are
/// 1-based and count the header.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == HEADER => {}
        Some((_, first)) => {
            return Err(Error::MalformedMetrics {
                line: 1,
                detail: format!("bad header {first:?}"),
            })
        }
        None => {
            return Err(Error::MalformedMetrics {
                line: 1,
                detail: String::from("empty file"),
            })
        }
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let bad = |detail: String| Error::MalformedMetrics {
            line: lineno,
            detail,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(bad(format!("expected 13 fields, got {}", fields.len())));
        }
        fn req<T: std::str::FromStr>(s: &str, what: &str, lineno: usize) -> Result<T> {
            s.parse().map_err(|_| Error::MalformedMetrics {
                line: lineno,
                detail: format!("bad {what} {s:?}"),
            })
        }
        fn opt<T: std::str::FromStr>(s: &str, what: &str, lineno: usize) -> Result<Option<T>> {
            if s.is_empty() {
                Ok(None)
            } else {
                req(s, what, lineno).map(Some)
            }
        }
        rows.push(MetricsRow {
            step: req(fields[0], "step", lineno)?,
            inner: req(fields[1], "inner", lineno)?,
            phase: req(fields[2], "phase", lineno)?,
            tau: opt(fields[3], "tau", lineno)?,
            dr_z: opt(fields[4], "dr_z", lineno)?,
            dr_zhat: opt(fields[5], "dr_zhat", lineno)?,
            pairwise_sum: opt(fields[6], "pairwise_sum", lineno)?,
            sigma_mean: opt(fields[7], "sigma_mean", lineno)?,
            acc_netd: opt(fields[8], "acc_netd", lineno)?,
            acc_netg: opt(fields[9], "acc_netg", lineno)?,
            gap: opt(fields[10], "gap", lineno)?,
            draw_id: opt(fields[11], "draw_id", lineno)?,
            ms: opt(fields[12], "ms", lineno)?,
        });
    }
    Ok(rows)
}
