//! CSV reports with a fixed header.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// One estimator evaluated at one operating point.
///
/// `sweep` carries the experiment's free variable when it is not an SNR or a
/// ratio (training-set size, slot index, assumed noise level, iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub snr_db: f64,
    pub ratio: f64,
    pub sweep: f64,
    pub seed: u64,
    pub nmse_db: f64,
    pub iters: f64,
    pub sigma_true: f64,
    pub sigma_hat: f64,
    pub wall_ms: f64,
}

impl ReportRow {
    pub fn new(method: impl Into<String>, snr_db: f64, nmse_db: f64) -> Self {
        Self {
            method: method.into(),
            snr_db,
            ratio: 1.0,
            sweep: f64::NAN,
            seed: 0,
            nmse_db,
            iters: f64::NAN,
            sigma_true: f64::NAN,
            sigma_hat: f64::NAN,
            wall_ms: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn filter<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// First row of `method` whose SNR equals `snr_db`.
    pub fn find(&self, method: &str, snr_db: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.snr_db == snr_db)
    }

    pub fn to_csv(&self) -> Result<String> {
        write_csv(&self.rows)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Ok(Self { rows: read_csv(text)? })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

/// Noise-level estimator accuracy at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub method: String,
    pub snr_db: f64,
    pub trials: usize,
    pub sigma_true: f64,
    pub bias: f64,
    pub std: f64,
    pub rmse: f64,
    pub percent_error: f64,
}

pub fn write_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .context("parsing report")
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
