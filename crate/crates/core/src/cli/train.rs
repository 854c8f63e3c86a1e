use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::forward::{backprop_masked, evaluate, Batch, WeightMap};
use crate::graph::NetworkGraph;
use crate::norms::{log_path_norm_dp, max_norm};
use crate::optim::{epoch_schedule, DropoutMask, OptimizerKind, OptimizerState};

use super::metrics::{MetricsLog, MetricsRow};

/// Training, validation and test examples, already flattened.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Batch,
    pub validation: Option<Batch>,
    pub test: Option<Batch>,
    pub classes: usize,
}

impl PreparedData {
    pub fn input_dim(&self) -> usize {
        self.train.dim()
    }
}

/// Hyperparameters of a single training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub momentum: f64,
    pub schedule: bool,
    pub p: f64,
    pub dropout: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `(tol, window)`: stop once the best objective of the last `window`
    /// epochs improves on the earlier best by less than `tol`.
    pub convergence: Option<(f64, usize)>,
}

impl RunSpec {
    pub fn new(optimizer: OptimizerKind, step_size: f64, epochs: usize, seed: u64) -> Self {
        Self {
            optimizer,
            step_size,
            momentum: 0.0,
            schedule: false,
            p: 2.0,
            dropout: None,
            epochs,
            batch_size: 100,
            seed,
            convergence: None,
        }
    }

    pub fn state(&self, num_edges: usize) -> Result<OptimizerState> {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerState::sgd(num_edges, self.step_size, self.momentum),
            OptimizerKind::Adagrad => OptimizerState::adagrad(num_edges, self.step_size),
            OptimizerKind::PathSgd => OptimizerState::path_sgd(self.step_size, self.p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: MetricsLog,
    pub weights: WeightMap,
    /// The objective or the weights became non-finite; the log stops at the
    /// last finite epoch.
    pub diverged: bool,
    pub converged: bool,
}

const DROPOUT_STREAM: u64 = 0xD50F_0A7C_11E5_0001;

/// Evaluates the network on every split of `data`.
pub fn measure(g: &NetworkGraph, w: &WeightMap, data: &PreparedData, epoch: usize, hidden_scale: f64) -> Result<MetricsRow> {
    let train = evaluate(g, w, &data.train, hidden_scale)?;
    let err = |b: &Option<Batch>| -> Result<Option<f64>> {
        b.as_ref()
            .map(|b| evaluate(g, w, b, hidden_scale).map(|e| e.error))
            .transpose()
    };
    Ok(MetricsRow {
        epoch,
        objective: train.loss,
        train_error: train.error,
        validation_error: err(&data.validation)?,
        test_error: err(&data.test)?,
        path_norm: log_path_norm_dp(g, w, 2.0)?.exp(),
        max_norm: max_norm(g, w, 2.0)?,
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Numeric(_))
}

/// Mini-batch training from `w0`. Batch order and dropout masks depend only
/// on `spec.seed`, so two runs with the same spec see identical streams.
pub fn train(g: &NetworkGraph, w0: &WeightMap, data: &PreparedData, spec: &RunSpec) -> Result<RunOutcome> {
    w0.validate(g)?;
    let mut state = spec.state(g.num_edges())?;
    let stream = BatchStream::new(data.train.clone(), spec.batch_size, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ DROPOUT_STREAM);
    let hidden_scale = spec.dropout.unwrap_or(1.0);
    let mut w = w0.clone();
    let mut log = MetricsLog::new();
    fn outcome(log: MetricsLog, weights: WeightMap, diverged: bool, converged: bool) -> RunOutcome {
        RunOutcome {
            log,
            weights,
            diverged,
            converged,
        }
    }

    match measure(g, &w, data, 0, hidden_scale) {
        Ok(row) => log.push(row, 0.0)?,
        Err(e) if is_divergence(&e) => return Ok(outcome(log, w, true, false)),
        Err(e) => return Err(e),
    }
    let start = Instant::now();
    for epoch in 1..=spec.epochs {
        for batch in stream.epoch(epoch - 1) {
            let mask = spec
                .dropout
                .map(|r| DropoutMask::sample(g, r, &mut rng))
                .transpose()?;
            let step = backprop_masked(g, &w, &batch, mask.as_ref()).and_then(|(grad, _)| state.step(g, &mut w, &grad));
            match step {
                Ok(()) => {}
                Err(e) if is_divergence(&e) => return Ok(outcome(log, w, true, false)),
                Err(e) => return Err(e),
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Ok(outcome(log, w, true, false));
            }
        }
        if spec.schedule {
            epoch_schedule(&mut state);
        }
        let row = match measure(g, &w, data, epoch, hidden_scale) {
            Ok(row) => row,
            Err(e) if is_divergence(&e) => return Ok(outcome(log, w, true, false)),
            Err(e) => return Err(e),
        };
        match log.push(row, start.elapsed().as_secs_f64()) {
            Ok(()) => {}
            Err(e) if is_divergence(&e) => return Ok(outcome(log, w, true, false)),
            Err(e) => return Err(e),
        }
        if let Some((tol, window)) = spec.convergence.filter(|&(_, k)| k > 0) {
            let obj = log.objectives();
            let split = obj.len().saturating_sub(window);
            let before = obj[..split].iter().copied().fold(f64::INFINITY, f64::min);
            let recent = obj[split..].iter().copied().fold(f64::INFINITY, f64::min);
            if split > 0 && before - recent < tol {
                return Ok(outcome(log, w, false, true));
            }
        }
    }
    Ok(outcome(log, w, false, false))
}
