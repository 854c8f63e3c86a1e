//! SGD with momentum, AdaGrad and Path-SGD, plus dropout masks.

mod dropout;
mod pathsgd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::WeightMap;
use crate::graph::NetworkGraph;

pub use dropout::{sample_dropout, DropoutMask};
pub use pathsgd::{apply_scaled_step, compute_path_scales, pathsgd_step, PathScaleTable};

pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    #[serde(rename = "pathsgd")]
    PathSgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Sgd, OptimizerKind::Adagrad, OptimizerKind::PathSgd];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::PathSgd => "pathsgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "pathsgd" | "path-sgd" => Ok(OptimizerKind::PathSgd),
            other => Err(Error::InvalidParams(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Mutable state of one optimizer over one training run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub momentum: f64,
    /// Path-norm exponent used by Path-SGD.
    pub p: f64,
    pub epoch: usize,
    /// Path-SGD recomputes its scales every this many steps.
    pub scale_refresh: usize,
    velocity: Vec<f64>,
    accum_sq_grad: Vec<f64>,
    steps: usize,
    scales: Option<PathScaleTable>,
}

fn check_step_size(step_size: f64) -> Result<()> {
    if step_size > 0.0 && step_size.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("step size must be positive, got {step_size}")))
    }
}

impl OptimizerState {
    fn blank(kind: OptimizerKind, step_size: f64) -> Result<Self> {
        check_step_size(step_size)?;
        Ok(Self {
            kind,
            step_size,
            momentum: 0.0,
            p: 2.0,
            epoch: 0,
            scale_refresh: 1,
            velocity: Vec::new(),
            accum_sq_grad: Vec::new(),
            steps: 0,
            scales: None,
        })
    }

    pub fn sgd(num_edges: usize, step_size: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParams(format!("momentum must be in [0, 1), got {momentum}")));
        }
        let mut s = Self::blank(OptimizerKind::Sgd, step_size)?;
        s.momentum = momentum;
        s.velocity = vec![0.0; num_edges];
        Ok(s)
    }

    pub fn adagrad(num_edges: usize, step_size: f64) -> Result<Self> {
        let mut s = Self::blank(OptimizerKind::Adagrad, step_size)?;
        s.accum_sq_grad = vec![0.0; num_edges];
        Ok(s)
    }

    pub fn path_sgd(step_size: f64, p: f64) -> Result<Self> {
        crate::norms::check_p(p)?;
        let mut s = Self::blank(OptimizerKind::PathSgd, step_size)?;
        s.p = p;
        Ok(s)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn accumulated_squares(&self) -> &[f64] {
        &self.accum_sq_grad
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Dispatches to the update rule of `self.kind`.
    pub fn step(&mut self, g: &NetworkGraph, w: &mut WeightMap, grad: &WeightMap) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self, w, grad),
            OptimizerKind::Adagrad => adagrad_step(self, w, grad),
            OptimizerKind::PathSgd => pathsgd_step(g, self, w, grad),
        }
    }
}

fn check_lengths(state_len: usize, w: &WeightMap, grad: &WeightMap) -> Result<()> {
    if w.len() != grad.len() || w.len() != state_len {
        return Err(Error::Shape {
            expected: state_len,
            actual: grad.len(),
        });
    }
    Ok(())
}

/// `velocity <- m * velocity - eta * grad`, then `w <- w + velocity`.
pub fn sgd_step(state: &mut OptimizerState, w: &mut WeightMap, grad: &WeightMap) -> Result<()> {
    if state.kind != OptimizerKind::Sgd {
        return Err(Error::InvalidRequest(format!("sgd_step called on a {} state", state.kind)));
    }
    check_lengths(state.velocity.len(), w, grad)?;
    let (m, eta) = (state.momentum, state.step_size);
    for ((we, ve), &ge) in w.as_mut_slice().iter_mut().zip(&mut state.velocity).zip(grad.iter()) {
        *ve = m * *ve - eta * ge;
        *we += *ve;
    }
    state.steps += 1;
    Ok(())
}

/// `accum += grad^2`, then `w -= eta * grad / (sqrt(accum) + eps)`.
pub fn adagrad_step(state: &mut OptimizerState, w: &mut WeightMap, grad: &WeightMap) -> Result<()> {
    if state.kind != OptimizerKind::Adagrad {
        return Err(Error::InvalidRequest(format!("adagrad_step called on a {} state", state.kind)));
    }
    check_lengths(state.accum_sq_grad.len(), w, grad)?;
    let eta = state.step_size;
    for ((we, acc), &ge) in w.as_mut_slice().iter_mut().zip(&mut state.accum_sq_grad).zip(grad.iter()) {
        *acc += ge * ge;
        *we -= eta * ge / (acc.sqrt() + ADAGRAD_EPSILON);
    }
    state.steps += 1;
    Ok(())
}

/// Per-epoch decay: `eta <- 0.99 eta`, `m <- min(0.9, m + 0.02)`.
pub fn epoch_schedule(state: &mut OptimizerState) {
    state.step_size *= 0.99;
    state.momentum = (state.momentum + 0.02).min(0.9);
    state.epoch += 1;
}
