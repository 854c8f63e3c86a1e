//! Path-normalized gradient steps.
//!
//! Each edge `e = (u -> v)` is updated as `w_e -= eta / gamma(e) * dL/dw_e`
//! where `gamma(e) = gamma_in(u)^(2/p) * gamma_out(v)^(2/p)` is the path
//! mass of every input-to-output path through `e`, excluding `e` itself.
//! Both accumulators come from one forward and one backward sweep over the
//! graph, independent of the batch size.

use crate::error::{Error, Result};
use crate::forward::WeightMap;
use crate::graph::NetworkGraph;
use crate::norms::{self, check_p};

use super::{OptimizerKind, OptimizerState};

#[derive(Debug, Clone, PartialEq)]
pub struct PathScaleTable {
    pub gamma_in: Vec<f64>,
    pub gamma_out: Vec<f64>,
    pub gamma_edge: Vec<f64>,
}

impl PathScaleTable {
    /// A table with every edge scale equal to one.
    pub fn unit(g: &NetworkGraph) -> Self {
        Self {
            gamma_in: vec![1.0; g.num_nodes()],
            gamma_out: vec![1.0; g.num_nodes()],
            gamma_edge: vec![1.0; g.num_edges()],
        }
    }
}

pub fn compute_path_scales(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<PathScaleTable> {
    check_p(p)?;
    w.validate(g)?;
    let gamma_in = norms::gamma_in(g, w, p);
    let gamma_out = norms::gamma_out(g, w, p);
    let exponent = 2.0 / p;
    let power = |x: f64| if p == 2.0 { x } else { x.powf(exponent) };
    let gamma_edge: Vec<f64> = g
        .edges()
        .iter()
        .map(|edge| power(gamma_in[edge.source]) * power(gamma_out[edge.target]))
        .collect();
    if let Some(e) = gamma_edge.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("path scale of edge {e} overflowed")));
    }
    Ok(PathScaleTable {
        gamma_in,
        gamma_out,
        gamma_edge,
    })
}

/// Applies `w_e -= step_size / gamma_e * grad_e` for every edge with a
/// nonzero scale. An edge with `gamma_e = 0` lies on no path of nonzero mass
/// and is left where it is. There is no absolute floor: rescaling a unit by
/// `c` divides the scales of its incoming edges by `c^2`, so any fixed cutoff
/// would treat equivalent networks differently.
pub fn apply_scaled_step(w: &mut WeightMap, grad: &WeightMap, scales: &PathScaleTable, step_size: f64) {
    for ((we, &ge), &gamma) in w.as_mut_slice().iter_mut().zip(grad.iter()).zip(&scales.gamma_edge) {
        if gamma > 0.0 {
            *we -= step_size / gamma * ge;
        }
    }
}

/// One Path-SGD update. Scales are computed from the current weights, before
/// any coordinate moves, unless the state asks for less frequent refreshes.
pub fn pathsgd_step(g: &NetworkGraph, state: &mut OptimizerState, w: &mut WeightMap, grad: &WeightMap) -> Result<()> {
    if state.kind != OptimizerKind::PathSgd {
        return Err(Error::InvalidRequest(format!("pathsgd_step called on a {:?} state", state.kind)));
    }
    if grad.len() != w.len() {
        return Err(Error::Shape {
            expected: w.len(),
            actual: grad.len(),
        });
    }
    let refresh = state.scales.is_none() || state.steps.is_multiple_of(state.scale_refresh.max(1));
    if refresh {
        state.scales = Some(compute_path_scales(g, w, state.p)?);
    }
    if let Some(scales) = &state.scales {
        apply_scaled_step(w, grad, scales, state.step_size);
    }
    state.steps += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn tiny() -> (NetworkGraph, WeightMap) {
        let g = NetworkGraph::layered(&[2, 1, 1]).unwrap();
        (g, WeightMap::new(vec![2.0, 3.0, 4.0]))
    }

    #[test]
    fn scales_by_hand() {
        let (g, w) = tiny();
        let t = compute_path_scales(&g, &w, 2.0).unwrap();
        assert_eq!(t.gamma_in[2], 13.0);
        assert_eq!(t.gamma_out[2], 16.0);
        assert_eq!(t.gamma_edge[2], 13.0);
        assert_eq!(t.gamma_edge[0], 16.0);
        assert_eq!(t.gamma_edge[1], 16.0);
        assert_eq!(t.gamma_in[0], 1.0);
        assert_eq!(t.gamma_out[3], 1.0);
    }

    #[test]
    fn single_edge_scale_is_one() {
        let g = NetworkGraph::dag(2, vec![0], vec![1], vec![Edge { source: 0, target: 1 }]).unwrap();
        let t = compute_path_scales(&g, &WeightMap::new(vec![-3.5]), 2.0).unwrap();
        assert_eq!(t.gamma_edge, vec![1.0]);
    }

    #[test]
    fn single_edge_step_is_plain_gradient_step() {
        let g = NetworkGraph::dag(2, vec![0], vec![1], vec![Edge { source: 0, target: 1 }]).unwrap();
        let mut state = OptimizerState::path_sgd(0.25, 2.0).unwrap();
        let mut w = WeightMap::new(vec![1.5]);
        pathsgd_step(&g, &mut state, &mut w, &WeightMap::new(vec![2.0])).unwrap();
        assert_eq!(w[0], 1.5 - 0.25 * 2.0);
    }

    #[test]
    fn step_divides_by_scale() {
        let (g, mut w) = tiny();
        let mut state = OptimizerState::path_sgd(13.0, 2.0).unwrap();
        let grad = WeightMap::new(vec![0.5, -0.25, 0.75]);
        pathsgd_step(&g, &mut state, &mut w, &grad).unwrap();
        assert_eq!(w[2], 4.0 - 0.75);
        assert_eq!(w[0], 2.0 - 13.0 / 16.0 * 0.5);
    }

    #[test]
    fn vanishing_scale_skips_edge() {
        // Hidden unit 2 has zero incoming weights, so its outgoing edge sees
        // gamma = 0 and must not move.
        let (g, _) = tiny();
        let mut w = WeightMap::new(vec![0.0, 0.0, 4.0]);
        let mut state = OptimizerState::path_sgd(1.0, 2.0).unwrap();
        pathsgd_step(&g, &mut state, &mut w, &WeightMap::new(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(w[2], 4.0);
        assert_eq!(w[0], -1.0 / 16.0);
    }

    #[test]
    fn tiny_scale_still_updates() {
        let (g, _) = tiny();
        let mut w = WeightMap::new(vec![1e-8, 0.0, 4.0]);
        let mut state = OptimizerState::path_sgd(1e-16, 2.0).unwrap();
        pathsgd_step(&g, &mut state, &mut w, &WeightMap::new(vec![0.0, 0.0, 1.0])).unwrap();
        assert!((w[2] - (4.0 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn wrong_state_kind_rejected() {
        let (g, mut w) = tiny();
        let mut state = OptimizerState::sgd(3, 0.1, 0.0).unwrap();
        assert!(pathsgd_step(&g, &mut state, &mut w, &WeightMap::zeros(3)).is_err());
    }

    #[test]
    fn stale_scales_reused_between_refreshes() {
        let (g, mut w) = tiny();
        let mut state = OptimizerState::path_sgd(0.1, 2.0).unwrap();
        state.scale_refresh = 3;
        let grad = WeightMap::new(vec![1.0, 1.0, 1.0]);
        pathsgd_step(&g, &mut state, &mut w, &grad).unwrap();
        let first = state.scales.clone().unwrap();
        pathsgd_step(&g, &mut state, &mut w, &grad).unwrap();
        assert_eq!(state.scales.as_ref().unwrap(), &first);
        pathsgd_step(&g, &mut state, &mut w, &grad).unwrap();
        pathsgd_step(&g, &mut state, &mut w, &grad).unwrap();
        assert_ne!(state.scales.as_ref().unwrap(), &first);
    }
}
