//! CSV files written and read by the CLI. All files are UTF-8 with LF line
//! endings and a header row.
//!
//! * evaluation reports: `instance,policy_id,runs,mean,stderr,horizon`
//! * learning curves: `t,step,value,alpha,stderr,policy_id`
//! * merged curves: `curve,t,step,value,alpha,stderr,policy_id`
//! * training log: `wall_seconds,step,return_<instance>...,policy_loss,value_loss,entropy,grad_norm`

use std::io::Write;
use std::path::Path;

use rddl_transfer::a3c::LogRow;
use rddl_transfer::eval::{CurvePoint, EvalReport};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CURVE_HEADER: [&str; 6] = ["t", "step", "value", "alpha", "stderr", "policy_id"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance: String,
    pub policy_id: String,
    pub runs: usize,
    pub mean: f64,
    pub stderr: f64,
    pub horizon: usize,
}

impl From<&EvalReport> for EvalRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            instance: r.instance.clone(),
            policy_id: r.policy_id.clone(),
            runs: r.runs,
            mean: r.mean,
            stderr: r.stderr,
            horizon: r.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub step: u64,
    pub value: f64,
    pub alpha: f64,
    pub stderr: f64,
    pub policy_id: String,
}

impl From<&CurvePoint> for CurveRow {
    fn from(p: &CurvePoint) -> Self {
        Self {
            t: p.t,
            step: p.step,
            value: p.value,
            alpha: p.alpha,
            stderr: p.stderr,
            policy_id: p.policy_id.clone(),
        }
    }
}

pub const MERGED_HEADER: [&str; 7] = ["curve", "t", "step", "value", "alpha", "stderr", "policy_id"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedRow {
    pub curve: String,
    pub t: f64,
    pub step: u64,
    pub value: f64,
    pub alpha: f64,
    pub stderr: f64,
    pub policy_id: String,
}

impl MergedRow {
    pub fn new(curve: &str, r: CurveRow) -> Self {
        Self {
            curve: curve.to_string(),
            t: r.t,
            step: r.step,
            value: r.value,
            alpha: r.alpha,
            stderr: r.stderr,
            policy_id: r.policy_id,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

/// Writes `rows` with a header, even when `rows` is empty.
pub fn write_rows<T: Serialize>(out: impl Write, header: &[&str], rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_rows(std::io::BufWriter::new(file), header, rows).map_err(|e| io_err(path, e))
}

pub const EVAL_HEADER: [&str; 6] = ["instance", "policy_id", "runs", "mean", "stderr", "horizon"];

/// Reads a curve file, checking the header. Errors name the offending line.
pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(CURVE_HEADER.iter().copied()) {
        return Err(CliError::io(format!(
            "{}: line 1: expected header `{}`",
            path.display(),
            CURVE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<CurveRow>() {
        rows.push(rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::io(format!("{}: line {line}: {e}", path.display()))
        })?);
    }
    Ok(rows)
}

/// Streaming writer for the training log.
pub struct LogWriter {
    inner: csv::Writer<std::fs::File>,
    problems: usize,
}

impl LogWriter {
    pub fn create(path: &Path, instance_names: &[String]) -> Result<Self, CliError> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| io_err(path, e))?;
        let mut header = vec!["wall_seconds".to_string(), "step".to_string()];
        header.extend(instance_names.iter().map(|n| format!("return_{n}")));
        header.extend(["policy_loss", "value_loss", "entropy", "grad_norm"].map(String::from));
        inner.write_record(&header).map_err(|e| io_err(path, e))?;
        Ok(Self {
            inner,
            problems: instance_names.len(),
        })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<(), String> {
        debug_assert_eq!(row.mean_returns.len(), self.problems);
        let mut rec = vec![format!("{:.3}", row.wall_seconds), row.step.to_string()];
        rec.extend(row.mean_returns.iter().map(|r| r.map_or(String::new(), |v| v.to_string())));
        rec.extend([row.policy_loss, row.value_loss, row.entropy, row.grad_norm].map(|v| v.to_string()));
        self.inner.write_record(&rec).map_err(|e| e.to_string())?;
        self.inner.flush().map_err(|e| e.to_string())
    }
}
