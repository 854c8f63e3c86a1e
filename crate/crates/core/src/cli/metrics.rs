use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation of the network, taken before training (epoch 0) and after
/// every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean truncated cross-entropy over the training set.
    pub objective: f64,
    pub train_error: f64,
    pub validation_error: Option<f64>,
    pub test_error: Option<f64>,
    /// Path regularizer with `p = 2`.
    pub path_norm: f64,
    /// Largest incoming l2 norm of any unit.
    pub max_norm: f64,
}

impl MetricsRow {
    fn values(&self) -> impl Iterator<Item = f64> {
        [self.objective, self.train_error, self.path_norm, self.max_norm]
            .into_iter()
            .chain(self.validation_error)
            .chain(self.test_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    epoch: usize,
    wall_seconds: f64,
}

/// Per-epoch record of a run. Wall-clock time is kept apart from the metric
/// rows so that reruns produce byte-identical metric files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
    wall_seconds: Vec<f64>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Epochs must increase and every value must be finite.
    pub fn push(&mut self, row: MetricsRow, wall_seconds: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::Consistency(format!(
                    "epoch {} recorded after epoch {}",
                    row.epoch, last.epoch
                )));
            }
        }
        if row.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite metric at epoch {}", row.epoch)));
        }
        self.rows.push(row);
        self.wall_seconds.push(wall_seconds);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn wall_seconds(&self) -> &[f64] {
        &self.wall_seconds
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// First epoch whose objective is at or below `level`.
    pub fn epochs_to_objective(&self, level: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.objective <= level).map(|r| r.epoch)
    }

    /// Row with the lowest validation error; the earliest wins ties.
    pub fn best_validation(&self) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .filter(|r| r.validation_error.is_some())
            .fold(None, |best: Option<&MetricsRow>, r| match best {
                Some(b) if b.validation_error <= r.validation_error => Some(b),
                _ => Some(r),
            })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Consistency(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Consistency(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut log = Self::new();
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
            log.push(row?, 0.0)?;
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (row, &t) in self.rows.iter().zip(&self.wall_seconds) {
            w.serialize(TimingRow {
                epoch: row.epoch,
                wall_seconds: t,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `<stem>.csv` and `<stem>.timing.csv` into `dir`.
    pub fn write_pair(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        self.write_timing(&dir.join(format!("{stem}.timing.csv")))
    }
}

/// Writes any serializable rows as CSV.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
