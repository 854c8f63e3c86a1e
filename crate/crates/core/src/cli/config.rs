use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArchSpec;
use crate::optim::OptimizerKind;

/// Environment variable that overrides the configured data directory.
pub const DATA_DIR_ENV: &str = "PATHSGD_DATA_DIR";
pub const MAX_ALPHA: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    WidthSweep,
    BalanceStudy,
    OptimizerCompare,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetKind::Cifar100),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// How the step-size grid search picks its winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Lowest validation error at the end of the budget; ties go to the run
    /// that reached its best validation error in fewer epochs.
    BestFinal,
    /// Fewest epochs to reach the best validation error seen across the grid.
    Fastest,
}

/// Complete description of one experiment. Every field is written to the
/// output directory as `config.json` before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Full architecture. When absent it is `[input, hidden..., classes]`.
    pub arch: Option<ArchSpec>,
    pub hidden: Vec<usize>,
    pub widths: Vec<usize>,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Side length images are resized to; `None` keeps them as loaded.
    pub downsample: Option<usize>,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub optimizers: Vec<OptimizerKind>,
    /// Step size `10^-alpha`. `None` runs the grid search over `alpha_grid`.
    pub alpha: Option<u32>,
    pub alpha_grid: Vec<u32>,
    pub selection: SelectionRule,
    pub momentum: f64,
    /// Per-epoch `eta <- 0.99 eta`, `m <- min(0.9, m + 0.02)`.
    pub schedule: bool,
    pub p: f64,
    /// Retain probability of hidden units; `None` disables dropout.
    pub dropout: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub unbalanced_units: usize,
    /// Stop when the best objective of the last `convergence_window` epochs
    /// beats the earlier best by less than `convergence_tol`. A window of 0
    /// disables the rule.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    /// Objective level used for epochs-to-threshold reporting.
    pub objective_threshold: f64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn new(experiment: ExperimentKind) -> Self {
        let mut c = Self {
            experiment,
            arch: None,
            hidden: vec![256, 256],
            widths: vec![4, 8, 16, 32, 64, 128, 256, 512],
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist-desk"),
            downsample: None,
            train_count: 5000,
            validation_count: 1000,
            test_count: 1000,
            optimizers: OptimizerKind::ALL.to_vec(),
            alpha: None,
            alpha_grid: (0..=MAX_ALPHA).collect(),
            selection: SelectionRule::BestFinal,
            momentum: 0.0,
            schedule: false,
            p: 2.0,
            dropout: None,
            epochs: 20,
            batch_size: 100,
            seed: 1,
            unbalanced_units: 2000,
            convergence_tol: 1e-6,
            convergence_window: 0,
            objective_threshold: 0.1,
            out: PathBuf::from("runs").join(match experiment {
                ExperimentKind::Train => "train",
                ExperimentKind::WidthSweep => "sweep-width",
                ExperimentKind::BalanceStudy => "balance-study",
                ExperimentKind::OptimizerCompare => "compare-optimizers",
                ExperimentKind::Verify => "verify",
            }),
        };
        match experiment {
            ExperimentKind::WidthSweep => {
                c.downsample = Some(10);
                c.optimizers = vec![OptimizerKind::Sgd];
                c.alpha = Some(1);
                c.momentum = 0.5;
                c.schedule = true;
                c.epochs = 300;
                c.convergence_window = 5;
            }
            ExperimentKind::Train => {
                c.optimizers = vec![OptimizerKind::PathSgd];
                c.alpha = Some(3);
            }
            ExperimentKind::BalanceStudy => {
                c.optimizers = vec![OptimizerKind::Sgd, OptimizerKind::PathSgd];
                c.alpha = Some(1);
                c.epochs = 10;
            }
            ExperimentKind::OptimizerCompare | ExperimentKind::Verify => {}
        }
        c
    }

    /// Replaces `data_dir` with the environment override when it is set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            self.data_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let Some(a) = self.alpha {
            if a > MAX_ALPHA {
                return bad(format!("alpha must be an integer in [0, {MAX_ALPHA}], got {a}"));
            }
        } else if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| a > MAX_ALPHA) {
            return bad(format!("alpha grid must be non-empty with values in [0, {MAX_ALPHA}]"));
        }
        if self.optimizers.is_empty() {
            return bad("at least one optimizer is required".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.train_count == 0 {
            return bad("epochs, batch size and train count must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if let Some(r) = self.dropout {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("dropout retain probability must be in (0, 1], got {r}"));
            }
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p must be a finite value >= 1, got {}", self.p));
        }
        if self.experiment == ExperimentKind::WidthSweep && self.widths.is_empty() {
            return bad("width sweep needs at least one width".into());
        }
        Ok(())
    }

    pub fn step_size(alpha: u32) -> f64 {
        10f64.powi(-(alpha as i32))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes `config.json` into `dir`, creating it if needed.
    pub fn write_sidecar(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        fs::write(&path, self.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
