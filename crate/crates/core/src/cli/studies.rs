use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{self, CifarVariant, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::optim::OptimizerKind;
use crate::rescale::{init_balanced, init_unbalanced};

use super::config::{DatasetKind, ExperimentConfig, SelectionRule};
use super::metrics::{write_rows, MetricsLog};
use super::train::{train, PreparedData, RunOutcome, RunSpec};

/// Relative tolerance for Path-SGD balanced and unbalanced curves.
pub const BALANCE_AGREEMENT_TOL: f64 = 1e-6;
const UNBALANCE_STREAM: u64 = 0x0BA1_A9CE_5EED_0002;
const TEST_STREAM: u64 = 0x7E57_5EED_0000_0003;

fn data_files(kind: DatasetKind, dir: &Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let f = |names: &[&str]| names.iter().map(|n| dir.join(n)).collect::<Vec<_>>();
    match kind {
        DatasetKind::Mnist => (
            f(&["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]),
            f(&["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]),
        ),
        DatasetKind::Cifar10 => (
            f(&["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"]),
            f(&["test_batch.bin"]),
        ),
        DatasetKind::Cifar100 => (f(&["train.bin"]), f(&["test.bin"])),
    }
}

fn load_files(kind: DatasetKind, files: &[PathBuf]) -> Result<Dataset> {
    match kind {
        DatasetKind::Mnist => data::load_idx(&files[0], &files[1]),
        DatasetKind::Cifar10 => data::load_cifar_binary(files, CifarVariant::Cifar10),
        DatasetKind::Cifar100 => data::load_cifar_binary(files, CifarVariant::Cifar100),
    }
}

fn resize(ds: Dataset, side: Option<usize>) -> Result<Dataset> {
    match side {
        None => Ok(ds),
        Some(s) => {
            let gray = data::to_grayscale(&ds);
            if gray.height == s && gray.width == s {
                Ok(gray)
            } else {
                data::downsample(&gray, s)
            }
        }
    }
}

/// Loads, resizes and splits the configured dataset. The validation part is
/// carved out of the training files; the test part is a seeded subset of the
/// test files.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (train_files, test_files) = data_files(config.dataset, &config.data_dir);
    if let Some(missing) = train_files.iter().chain(&test_files).find(|p| !p.is_file()) {
        return Err(Error::Config(format!(
            "data file {} not found (set --data-dir or {})",
            missing.display(),
            super::config::DATA_DIR_ENV
        )));
    }
    let pool = resize(load_files(config.dataset, &train_files)?, config.downsample)?;
    let parts = data::split(
        &pool,
        SplitSpec {
            train_count: config.train_count,
            validation_count: config.validation_count,
            seed: config.seed,
        },
    )?;
    let test = if config.test_count == 0 {
        None
    } else {
        let test_pool = resize(load_files(config.dataset, &test_files)?, config.downsample)?;
        if config.test_count > test_pool.len() {
            return Err(Error::Consistency(format!(
                "requested {} test examples but only {} exist",
                config.test_count,
                test_pool.len()
            )));
        }
        let mut order: Vec<usize> = (0..test_pool.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ TEST_STREAM));
        Some(test_pool.subset(&order[..config.test_count]).to_batch()?)
    };
    Ok(PreparedData {
        train: parts.train.to_batch()?,
        validation: (config.validation_count > 0)
            .then(|| parts.validation.to_batch())
            .transpose()?,
        test,
        classes: pool.class_count,
    })
}

/// The configured architecture, or `[input, hidden..., classes]`.
pub fn build_arch(config: &ExperimentConfig, data: &PreparedData, hidden: &[usize]) -> Result<NetworkGraph> {
    let g = match &config.arch {
        Some(spec) => spec.build()?,
        None => {
            let mut sizes = vec![data.input_dim()];
            sizes.extend_from_slice(hidden);
            sizes.push(data.classes);
            NetworkGraph::layered(&sizes)?
        }
    };
    if g.input_dim() != data.input_dim() || g.output_dim() != data.classes {
        return Err(Error::Config(format!(
            "architecture has {} inputs and {} outputs but the data has {} features and {} classes",
            g.input_dim(),
            g.output_dim(),
            data.input_dim(),
            data.classes
        )));
    }
    Ok(g)
}

pub fn run_spec(config: &ExperimentConfig, optimizer: OptimizerKind, alpha: u32) -> RunSpec {
    RunSpec {
        optimizer,
        step_size: ExperimentConfig::step_size(alpha),
        momentum: if optimizer == OptimizerKind::Sgd { config.momentum } else { 0.0 },
        schedule: config.schedule,
        p: config.p,
        dropout: config.dropout,
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        convergence: (config.convergence_window > 0).then_some((config.convergence_tol, config.convergence_window)),
    }
}

fn require_alpha(config: &ExperimentConfig) -> Result<u32> {
    config
        .alpha
        .ok_or_else(|| Error::Config(format!("{:?} needs a fixed --alpha", config.experiment)))
}

/// A single training run written to `metrics.csv`.
pub fn run_train(config: &ExperimentConfig, data: &PreparedData) -> Result<RunOutcome> {
    config.validate()?;
    config.write_sidecar(&config.out)?;
    let g = build_arch(config, data, &config.hidden)?;
    let spec = run_spec(config, config.optimizers[0], require_alpha(config)?);
    let out = train(&g, &init_balanced(&g, config.seed), data, &spec)?;
    out.log.write_pair(&config.out, "metrics")?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthCell {
    pub width: usize,
    pub epochs_run: usize,
    pub diverged: bool,
    pub converged: bool,
    pub final_objective: Option<f64>,
    pub final_train_error: Option<f64>,
    pub final_test_error: Option<f64>,
    pub early_stop_epoch: Option<usize>,
    pub early_stop_test_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WidthSweepReport {
    pub cells: Vec<WidthCell>,
    pub logs: Vec<MetricsLog>,
}

impl WidthSweepReport {
    fn usable(&self) -> impl Iterator<Item = &WidthCell> {
        self.cells.iter().filter(|c| !c.diverged && c.final_train_error.is_some())
    }

    /// Smallest width whose final training error is zero.
    pub fn interpolation_width(&self) -> Option<&WidthCell> {
        self.usable().find(|c| c.final_train_error == Some(0.0))
    }

    /// Final training error never increases with the width.
    pub fn train_error_non_increasing(&self) -> bool {
        let errs: Vec<f64> = self.usable().filter_map(|c| c.final_train_error).collect();
        errs.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn cell(&self, width: usize) -> Option<&WidthCell> {
        self.cells.iter().find(|c| c.width == width)
    }
}

/// Trains `[input, H, classes]` for every configured width `H`.
pub fn run_width_sweep(config: &ExperimentConfig, data: &PreparedData) -> Result<WidthSweepReport> {
    config.validate()?;
    config.write_sidecar(&config.out)?;
    let alpha = require_alpha(config)?;
    let mut widths = config.widths.clone();
    widths.sort_unstable();
    widths.dedup();
    let mut report = WidthSweepReport {
        cells: Vec::new(),
        logs: Vec::new(),
    };
    for h in widths {
        let sizes = [data.input_dim(), h, data.classes];
        let g = NetworkGraph::layered(&sizes)?;
        let spec = run_spec(config, config.optimizers[0], alpha);
        let out = train(&g, &init_balanced(&g, config.seed), data, &spec)?;
        out.log.write_pair(&config.out, &format!("width-{h}"))?;
        let last = out.log.last().filter(|_| !out.diverged);
        let best = out.log.best_validation().filter(|_| !out.diverged);
        report.cells.push(WidthCell {
            width: h,
            epochs_run: out.log.last().map_or(0, |r| r.epoch),
            diverged: out.diverged,
            converged: out.converged,
            final_objective: last.map(|r| r.objective),
            final_train_error: last.map(|r| r.train_error),
            final_test_error: last.and_then(|r| r.test_error),
            early_stop_epoch: best.map(|r| r.epoch),
            early_stop_test_error: best.and_then(|r| r.test_error),
        });
        report.logs.push(out.log);
    }
    write_rows(&config.out.join("summary.csv"), &report.cells)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub optimizer: OptimizerKind,
    pub balanced_final_objective: Option<f64>,
    pub unbalanced_final_objective: Option<f64>,
    pub balanced_diverged: bool,
    pub unbalanced_diverged: bool,
    /// Unbalanced over balanced final objective.
    pub objective_ratio: Option<f64>,
    /// Largest per-epoch relative gap between the two objective curves.
    pub max_relative_difference: f64,
}

#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub balanced: Vec<MetricsLog>,
    pub unbalanced: Vec<MetricsLog>,
}

impl BalanceReport {
    pub fn row(&self, kind: OptimizerKind) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.optimizer == kind)
    }

    /// Path-SGD rows whose curves disagree beyond the tolerance.
    pub fn path_sgd_disagreements(&self) -> Vec<&BalanceRow> {
        self.rows
            .iter()
            .filter(|r| r.optimizer == OptimizerKind::PathSgd && (r.max_relative_difference.is_nan() || r.max_relative_difference > BALANCE_AGREEMENT_TOL))
            .collect()
    }
}

/// Largest relative difference between two curves; infinite when their
/// lengths differ.
pub fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Trains every configured optimizer from a balanced initialization and from
/// a rescaled copy of it, using identical batch and dropout streams.
pub fn run_balance_study(config: &ExperimentConfig, data: &PreparedData) -> Result<BalanceReport> {
    config.validate()?;
    config.write_sidecar(&config.out)?;
    let alpha = require_alpha(config)?;
    let g = build_arch(config, data, &config.hidden)?;
    let w0 = init_balanced(&g, config.seed);
    let w1 = init_unbalanced(&g, &w0, config.seed ^ UNBALANCE_STREAM, config.unbalanced_units)?;
    let mut report = BalanceReport {
        rows: Vec::new(),
        balanced: Vec::new(),
        unbalanced: Vec::new(),
    };
    for &kind in &config.optimizers {
        let spec = run_spec(config, kind, alpha);
        let a = train(&g, &w0, data, &spec)?;
        let b = train(&g, &w1, data, &spec)?;
        a.log.write_pair(&config.out, &format!("{kind}-balanced"))?;
        b.log.write_pair(&config.out, &format!("{kind}-unbalanced"))?;
        let fa = a.log.last().map(|r| r.objective).filter(|_| !a.diverged);
        let fb = b.log.last().map(|r| r.objective).filter(|_| !b.diverged);
        let ratio = match (fa, fb, b.diverged) {
            (Some(x), Some(y), _) if x > 0.0 => Some(y / x),
            (Some(_), _, true) => Some(f64::INFINITY),
            _ => None,
        };
        report.rows.push(BalanceRow {
            optimizer: kind,
            balanced_final_objective: fa,
            unbalanced_final_objective: fb,
            balanced_diverged: a.diverged,
            unbalanced_diverged: b.diverged,
            objective_ratio: ratio,
            max_relative_difference: max_relative_difference(&a.log.objectives(), &b.log.objectives()),
        });
        report.balanced.push(a.log);
        report.unbalanced.push(b.log);
    }
    write_rows(&config.out.join("summary.csv"), &report.rows)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub optimizer: OptimizerKind,
    pub alpha: u32,
    pub step_size: f64,
    pub diverged: bool,
    pub final_validation_error: Option<f64>,
    pub best_validation_error: Option<f64>,
    pub epochs_to_best: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub optimizer: OptimizerKind,
    pub alpha: u32,
    pub step_size: f64,
    pub objective_threshold: f64,
    pub epochs_to_threshold: Option<usize>,
    pub final_objective: f64,
    pub final_train_error: f64,
    pub final_validation_error: Option<f64>,
    pub final_test_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub grid: Vec<GridCell>,
    pub logs: Vec<MetricsLog>,
}

impl CompareReport {
    pub fn row(&self, kind: OptimizerKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.optimizer == kind)
    }
}

fn grid_cell(kind: OptimizerKind, alpha: u32, out: &RunOutcome) -> GridCell {
    let usable = !out.diverged && !out.log.is_empty();
    let best = out.log.best_validation().filter(|_| usable);
    GridCell {
        optimizer: kind,
        alpha,
        step_size: ExperimentConfig::step_size(alpha),
        diverged: out.diverged,
        final_validation_error: out.log.last().filter(|_| usable).and_then(|r| r.validation_error),
        best_validation_error: best.and_then(|r| r.validation_error),
        epochs_to_best: best.map(|r| r.epoch),
    }
}

/// Index of the winning grid cell, or `None` when every run diverged.
pub fn select_alpha(cells: &[GridCell], rule: SelectionRule) -> Option<usize> {
    let key = |c: &GridCell| match rule {
        SelectionRule::BestFinal => (c.final_validation_error, c.epochs_to_best.map(|e| e as f64)),
        SelectionRule::Fastest => (c.epochs_to_best.map(|e| e as f64), c.final_validation_error),
    };
    let candidates: Vec<usize> = match rule {
        SelectionRule::BestFinal => (0..cells.len()).filter(|&i| cells[i].final_validation_error.is_some()).collect(),
        SelectionRule::Fastest => {
            let target = cells
                .iter()
                .filter_map(|c| c.best_validation_error)
                .fold(f64::INFINITY, f64::min);
            (0..cells.len()).filter(|&i| cells[i].best_validation_error == Some(target)).collect()
        }
    };
    candidates.into_iter().min_by(|&i, &j| {
        let (a, b) = (key(&cells[i]), key(&cells[j]));
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    })
}

/// Grid-searches the step size of every optimizer on the validation split and
/// keeps the learning curve of the selected run.
pub fn run_optimizer_compare(config: &ExperimentConfig, data: &PreparedData) -> Result<CompareReport> {
    config.validate()?;
    if data.validation.is_none() {
        return Err(Error::Config("step-size selection needs a validation split".into()));
    }
    config.write_sidecar(&config.out)?;
    let g = build_arch(config, data, &config.hidden)?;
    let w0 = init_balanced(&g, config.seed);
    let alphas: Vec<u32> = match config.alpha {
        Some(a) => vec![a],
        None => config.alpha_grid.clone(),
    };
    let mut report = CompareReport {
        rows: Vec::new(),
        grid: Vec::new(),
        logs: Vec::new(),
    };
    for &kind in &config.optimizers {
        let mut cells = Vec::new();
        let mut runs = Vec::new();
        for &alpha in &alphas {
            let out = train(&g, &w0, data, &run_spec(config, kind, alpha))?;
            out.log.write_pair(&config.out.join("grid"), &format!("{kind}-alpha{alpha}"))?;
            cells.push(grid_cell(kind, alpha, &out));
            runs.push(out);
        }
        let Some(best) = select_alpha(&cells, config.selection) else {
            report.grid.extend(cells);
            return Err(Error::Numeric(format!("every step size diverged for {kind}")));
        };
        let chosen = &runs[best];
        let last = chosen.log.last().ok_or_else(|| Error::Numeric(format!("{kind} run recorded no epochs")))?;
        chosen.log.write_pair(&config.out, &kind.to_string())?;
        report.rows.push(CompareRow {
            optimizer: kind,
            alpha: cells[best].alpha,
            step_size: cells[best].step_size,
            objective_threshold: config.objective_threshold,
            epochs_to_threshold: chosen.log.epochs_to_objective(config.objective_threshold),
            final_objective: last.objective,
            final_train_error: last.train_error,
            final_validation_error: last.validation_error,
            final_test_error: last.test_error,
        });
        report.logs.push(chosen.log.clone());
        report.grid.extend(cells);
    }
    write_rows(&config.out.join("grid.csv"), &report.grid)?;
    write_rows(&config.out.join("summary.csv"), &report.rows)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(alpha: u32, fin: Option<f64>, best: Option<f64>, at: Option<usize>) -> GridCell {
        GridCell {
            optimizer: OptimizerKind::Sgd,
            alpha,
            step_size: ExperimentConfig::step_size(alpha),
            diverged: fin.is_none(),
            final_validation_error: fin,
            best_validation_error: best,
            epochs_to_best: at,
        }
    }

    #[test]
    fn best_final_rule_with_tiebreak() {
        let cells = [
            cell(0, None, None, None),
            cell(1, Some(0.05), Some(0.04), Some(9)),
            cell(2, Some(0.05), Some(0.05), Some(3)),
            cell(3, Some(0.08), Some(0.03), Some(2)),
        ];
        assert_eq!(select_alpha(&cells, SelectionRule::BestFinal), Some(2));
        assert_eq!(select_alpha(&cells, SelectionRule::Fastest), Some(3));
        assert_eq!(select_alpha(&cells[..1], SelectionRule::BestFinal), None);
    }

    #[test]
    fn relative_difference_of_curves() {
        assert_eq!(max_relative_difference(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_relative_difference(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
        assert_eq!(max_relative_difference(&[0.0], &[0.0]), 0.0);
        assert!(max_relative_difference(&[1.0], &[1.0, 2.0]).is_infinite());
    }

    #[test]
    fn missing_data_is_a_config_error() {
        let mut c = ExperimentConfig::new(super::super::config::ExperimentKind::Train);
        c.data_dir = PathBuf::from("/nonexistent/pathsgd");
        assert!(matches!(prepare_data(&c), Err(Error::Config(_))));
    }
}
