//! Per-round metrics rows and their CSV / JSON-lines writers.
//!
//! The CSV starts with `# schema_version=1`, then a header with the columns
//! of [`RoundMetrics`] in declaration order. Missing values are empty cells
//! in CSV and `null` in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rotsecagg::fedsim::RoundRecord;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 14] = [
    "round",
    "cohort_size",
    "eval_accuracy",
    "train_loss",
    "sigma_circle",
    "sigma_value",
    "t",
    "bin_size",
    "sigma_over_t",
    "est_wrap_fraction",
    "bits_per_entry",
    "sum_mse",
    "max_norm_deviation",
    "max_update_norm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub cohort_size: usize,
    pub eval_accuracy: f64,
    pub train_loss: Option<f64>,
    pub sigma_circle: Option<f64>,
    pub sigma_value: Option<f64>,
    pub t: Option<f64>,
    pub bin_size: Option<f64>,
    pub sigma_over_t: Option<f64>,
    pub est_wrap_fraction: Option<f64>,
    pub bits_per_entry: f64,
    pub sum_mse: Option<f64>,
    pub max_norm_deviation: Option<f64>,
    pub max_update_norm: Option<f64>,
}

fn finite(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite())
}

impl From<&RoundRecord> for RoundMetrics {
    fn from(r: &RoundRecord) -> Self {
        let d = &r.diagnostics;
        Self {
            round: r.round,
            cohort_size: r.cohort_size,
            eval_accuracy: r.eval_accuracy,
            train_loss: finite(Some(r.train_loss)),
            sigma_circle: finite(d.sigma_circle),
            sigma_value: finite(d.sigma_value),
            t: finite(d.t),
            bin_size: finite(d.bin_size),
            sigma_over_t: finite(d.sigma_value.zip(d.t).map(|(s, t)| s / t)),
            est_wrap_fraction: finite(d.estimated_wrap_fraction),
            bits_per_entry: d.bits_per_entry,
            sum_mse: finite(r.sum_mse),
            max_norm_deviation: finite(d.max_norm_deviation),
            max_update_norm: finite(Some(r.max_update_norm)),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub struct MetricsWriter {
    csv: csv::Writer<BufWriter<File>>,
    jsonl: Option<(PathBuf, BufWriter<File>)>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Creates `path` (and `path` with a `.jsonl` extension if asked),
    /// writing the schema line and header immediately.
    pub fn create(path: &Path, jsonl: bool) -> Result<Self, HarnessError> {
        let mut file = BufWriter::new(File::create(path).map_err(io(path))?);
        writeln!(file, "# schema_version={SCHEMA_VERSION}").map_err(io(path))?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        csv.write_record(COLUMNS)?;
        let jsonl = if jsonl {
            let p = path.with_extension("jsonl");
            let f = BufWriter::new(File::create(&p).map_err(io(&p))?);
            Some((p, f))
        } else {
            None
        };
        Ok(Self { csv, jsonl, path: path.to_path_buf() })
    }

    pub fn write(&mut self, row: &RoundMetrics) -> Result<(), HarnessError> {
        self.csv.serialize(row)?;
        if let Some((p, f)) = &mut self.jsonl {
            serde_json::to_writer(&mut *f, row)?;
            writeln!(f).map_err(io(p))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, HarnessError> {
        self.csv.flush().map_err(io(&self.path))?;
        if let Some((p, mut f)) = self.jsonl.take() {
            f.flush().map_err(io(&p))?;
        }
        Ok(self.path)
    }
}

/// Reads rows back from a metrics CSV, skipping the schema line.
pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let body = text.split_once('\n').map_or("", |(_, rest)| rest);
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(HarnessError::from)
}
