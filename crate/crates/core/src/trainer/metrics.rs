//! Append-only metrics CSV.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_VERSION_LINE: &str = "# so2-metrics v1";
pub const METRICS_COLUMNS: [&str; 8] = [
    "env_step",
    "grad_step",
    "critic_loss",
    "actor_objective",
    "beta",
    "eval_return_mean",
    "eval_return_std",
    "online_fraction_in_batch",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub grad_step: u64,
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub beta: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub online_fraction_in_batch: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.env_step,
            self.grad_step,
            self.critic_loss,
            self.actor_objective,
            self.beta,
            self.eval_return_mean,
            self.eval_return_std,
            self.online_fraction_in_batch
        )
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the version and column lines.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path,
        };
        w.line(METRICS_VERSION_LINE)?;
        w.line(&METRICS_COLUMNS.join(","))?;
        w.flush()?;
        Ok(w)
    }

    /// Reopens an existing metrics file for appending.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv())?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
