use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use latte::training::{EpochRecord, EvalResult};
use serde_json::{json, Value};

use crate::{CliError, CliResult};

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

/// Tab-separated per-epoch metrics, written line by line.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch\tsplit\tloss\taccuracy\tauc";

    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut log = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        log.line(Self::HEADER)?;
        Ok(log)
    }

    pub fn line(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| io_err(&self.path, e))
    }

    pub fn record(&mut self, r: &EpochRecord) -> CliResult<()> {
        self.line(&r.tsv())
    }
}

pub fn record_json(r: &EpochRecord) -> Value {
    json!({
        "epoch": r.epoch,
        "split": r.split.name(),
        "loss": r.loss,
        "accuracy": r.accuracy,
        "auc": r.auc,
    })
}

pub fn eval_json(e: &EvalResult) -> Value {
    json!({
        "trials": e.labels.len(),
        "loss": e.loss,
        "accuracy": e.accuracy,
        "auc": e.auc,
    })
}

pub fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
