//! Group norms, the per-unit max-norm, the path vector and the l_p path
//! regularizer.
//!
//! The path regularizer has two independent routes: explicit enumeration of
//! every input-to-output path ([`path_norm_bruteforce`]) and a single
//! forward dynamic-programming pass ([`path_norm_dp`]).

use crate::error::{Error, Result};
use crate::forward::WeightMap;
use crate::graph::{NetworkGraph, Path, Role};

/// The outer exponent of a group norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outer {
    Finite(f64),
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub p: f64,
    pub q: Outer,
}

impl NormParams {
    pub fn new(p: f64, q: Outer) -> Result<Self> {
        check_p(p)?;
        if let Outer::Finite(q) = q {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(Error::InvalidParams(format!("q must be >= 1, got {q}")));
            }
        }
        Ok(Self { p, q })
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("p must be a finite value >= 1, got {p}")))
    }
}

/// `|x|^p` with the common exponents special-cased.
#[inline]
pub(crate) fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x.abs()
    } else {
        x.abs().powf(p)
    }
}

/// `x^(1/p)` for `x >= 0`.
#[inline]
pub(crate) fn root(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x.sqrt()
    } else if p == 1.0 {
        x
    } else {
        x.powf(1.0 / p)
    }
}

/// For every node, `sum over incoming edges of |w|^p` (zero at inputs).
pub fn incoming_power_sums(g: &NetworkGraph, w: &WeightMap, p: f64) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|v| g.incoming(v).iter().map(|&e| abs_pow(w[e], p)).sum())
        .collect()
}

/// `mu_{p,q}`: per-unit l_p norms of incoming weights combined by an l_q
/// norm. Nodes without incoming edges contribute an empty group of norm 0.
pub fn group_norm(g: &NetworkGraph, w: &WeightMap, params: NormParams) -> Result<f64> {
    let params = NormParams::new(params.p, params.q)?;
    w.validate(g)?;
    let sums = incoming_power_sums(g, w, params.p);
    let value = match params.q {
        Outer::Infinity => sums.iter().map(|&s| root(s, params.p)).fold(0.0, f64::max),
        Outer::Finite(q) => {
            let total: f64 = sums
                .iter()
                .filter(|&&s| s > 0.0)
                .map(|&s| s.powf(q / params.p))
                .sum();
            total.powf(1.0 / q)
        }
    };
    Ok(value)
}

/// `mu_{p,inf}`: the largest incoming-weight l_p norm over all units.
pub fn max_norm(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<f64> {
    group_norm(g, w, NormParams::new(p, Outer::Infinity)?)
}

/// Products of weights along every input-to-output path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVector {
    pub paths: Vec<Path>,
    pub values: Vec<f64>,
}

impl PathVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest relative entrywise deviation from `other`, measured against the
    /// largest magnitude in either vector.
    pub fn max_relative_difference(&self, other: &PathVector) -> f64 {
        let scale = self
            .values
            .iter()
            .chain(&other.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() / scale)
            .fold(0.0, f64::max)
    }
}

pub fn path_vector(g: &NetworkGraph, w: &WeightMap) -> Result<PathVector> {
    w.validate(g)?;
    let paths = g.enumerate_paths()?;
    let values = paths
        .iter()
        .map(|path| path.edges().iter().map(|&e| w[e]).product())
        .collect();
    Ok(PathVector { paths, values })
}

/// `phi_p` by explicit enumeration of every path.
pub fn path_norm_bruteforce(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<f64> {
    check_p(p)?;
    let pv = path_vector(g, w)?;
    let total: f64 = pv.values.iter().map(|&v| abs_pow(v, p)).sum();
    Ok(root(total, p))
}

/// Forward accumulation of `gamma_in(v) = sum_{u->v} gamma_in(u) |w_uv|^p`,
/// with `gamma_in = 1` at input nodes.
pub fn gamma_in(g: &NetworkGraph, w: &WeightMap, p: f64) -> Vec<f64> {
    let edges = g.edges();
    let mut gamma = vec![0.0; g.num_nodes()];
    for &v in g.topo_order() {
        gamma[v] = if g.role(v) == Role::Input {
            1.0
        } else if let Some(run) = g.contiguous_run(v) {
            let ws = &w.as_slice()[run.first_edge..run.first_edge + run.len];
            let gs = &gamma[run.first_source..run.first_source + run.len];
            ws.iter().zip(gs).map(|(&x, &gu)| gu * abs_pow(x, p)).sum()
        } else {
            g.incoming(v)
                .iter()
                .map(|&e| gamma[edges[e].source] * abs_pow(w[e], p))
                .sum()
        };
    }
    gamma
}

/// Backward accumulation of `gamma_out(v) = sum_{v->u} |w_vu|^p gamma_out(u)`,
/// with `gamma_out = 1` at output nodes.
pub fn gamma_out(g: &NetworkGraph, w: &WeightMap, p: f64) -> Vec<f64> {
    let edges = g.edges();
    let mut gamma = vec![0.0; g.num_nodes()];
    for &v in g.outputs() {
        gamma[v] = 1.0;
    }
    // Reverse topological order: every successor of `v` has already pushed
    // its share into `gamma[v]`, which is then pushed on to v's sources.
    for &v in g.topo_order().iter().rev() {
        let gv = gamma[v];
        if gv == 0.0 {
            continue;
        }
        match g.contiguous_run(v) {
            Some(run) => {
                let ws = &w.as_slice()[run.first_edge..run.first_edge + run.len];
                let gs = &mut gamma[run.first_source..run.first_source + run.len];
                for (gu, &x) in gs.iter_mut().zip(ws) {
                    *gu += abs_pow(x, p) * gv;
                }
            }
            None => {
                for &e in g.incoming(v) {
                    gamma[edges[e].source] += abs_pow(w[e], p) * gv;
                }
            }
        }
    }
    gamma
}

/// `phi_p` in one topological pass. Fails if the accumulation overflows; use
/// [`log_path_norm_dp`] for such networks.
pub fn path_norm_dp(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<f64> {
    check_p(p)?;
    w.validate(g)?;
    let gamma = gamma_in(g, w, p);
    let total: f64 = g.outputs().iter().map(|&v| gamma[v]).sum();
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "path-norm accumulation overflowed (p = {p}); use the log-space routine"
        )));
    }
    Ok(root(total, p))
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `ln phi_p`, accumulated entirely in log space. Returns `-inf` when every
/// path has a zero weight.
pub fn log_path_norm_dp(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<f64> {
    check_p(p)?;
    w.validate(g)?;
    let edges = g.edges();
    let mut log_gamma = vec![f64::NEG_INFINITY; g.num_nodes()];
    for &v in g.topo_order() {
        log_gamma[v] = if g.role(v) == Role::Input {
            0.0
        } else {
            log_sum_exp(
                g.incoming(v)
                    .iter()
                    .map(|&e| log_gamma[edges[e].source] + p * w[e].abs().ln()),
            )
        };
    }
    Ok(log_sum_exp(g.outputs().iter().map(|&v| log_gamma[v])) / p)
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
    fn group_norm_examples() {
        let (g, w) = tiny();
        let l2 = group_norm(&g, &w, NormParams::new(2.0, Outer::Finite(2.0)).unwrap()).unwrap();
        assert!((l2 - 29f64.sqrt()).abs() < 1e-12);
        let l1 = group_norm(&g, &w, NormParams::new(1.0, Outer::Finite(1.0)).unwrap()).unwrap();
        assert!((l1 - 9.0).abs() < 1e-12);
        let zero = WeightMap::zeros(3);
        assert_eq!(group_norm(&g, &zero, NormParams { p: 2.0, q: Outer::Finite(2.0) }).unwrap(), 0.0);
    }

    #[test]
    fn invalid_norm_params() {
        assert!(matches!(NormParams::new(0.5, Outer::Infinity), Err(Error::InvalidParams(_))));
        assert!(matches!(NormParams::new(2.0, Outer::Finite(0.9)), Err(Error::InvalidParams(_))));
        let (g, w) = tiny();
        assert!(matches!(max_norm(&g, &w, 0.0), Err(Error::InvalidParams(_))));
        assert!(path_norm_dp(&g, &w, f64::NAN).is_err());
    }

    #[test]
    fn max_norm_examples() {
        let (g, w) = tiny();
        assert_eq!(max_norm(&g, &w, 2.0).unwrap(), 4.0);
        let g1 = NetworkGraph::dag(2, vec![0], vec![1], vec![Edge { source: 0, target: 1 }]).unwrap();
        assert_eq!(max_norm(&g1, &WeightMap::new(vec![-5.0]), 1.0).unwrap(), 5.0);
    }

    #[test]
    fn path_vector_examples() {
        let (g, w) = tiny();
        let pv = path_vector(&g, &w).unwrap();
        assert_eq!(pv.values, vec![8.0, 12.0]);
        let g1 = NetworkGraph::dag(2, vec![0], vec![1], vec![Edge { source: 0, target: 1 }]).unwrap();
        assert_eq!(path_vector(&g1, &WeightMap::new(vec![-1.5])).unwrap().values, vec![-1.5]);
    }

    #[test]
    fn path_norm_examples() {
        let (g, w) = tiny();
        assert!((path_norm_bruteforce(&g, &w, 2.0).unwrap() - 208f64.sqrt()).abs() < 1e-12);
        assert!((path_norm_bruteforce(&g, &w, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((path_norm_dp(&g, &w, 2.0).unwrap() - 208f64.sqrt()).abs() < 1e-12);
        let gi = gamma_in(&g, &w, 2.0);
        assert_eq!(gi[2], 13.0);
        assert_eq!(gi[3], 208.0);
        let ones = NetworkGraph::layered(&[2, 2, 2]).unwrap();
        let w1 = WeightMap::new(vec![1.0; ones.num_edges()]);
        assert_eq!(path_norm_dp(&ones, &w1, 1.0).unwrap(), 8.0);
        let g1 = NetworkGraph::dag(2, vec![0], vec![1], vec![Edge { source: 0, target: 1 }]).unwrap();
        assert_eq!(path_norm_bruteforce(&g1, &WeightMap::new(vec![-3.0]), 3.0).unwrap(), 3.0);
    }

    #[test]
    fn dp_overflow_is_loud() {
        let g = NetworkGraph::layered(&[4, 4, 4, 4, 4, 1]).unwrap();
        let w = WeightMap::new(vec![1e80; g.num_edges()]);
        assert!(matches!(path_norm_dp(&g, &w, 2.0), Err(Error::Numeric(_))));
        let log = log_path_norm_dp(&g, &w, 2.0).unwrap();
        // 4^5 paths of |w|^5 each: ln phi_2 = 0.5 ln(4^5) + 5 ln(1e80)
        let expected = 0.5 * 5.0 * 4f64.ln() + 5.0 * 1e80f64.ln();
        assert!((log - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn log_route_matches_linear_route() {
        let g = NetworkGraph::layered(&[3, 4, 2]).unwrap();
        let w = WeightMap::new((0..g.num_edges()).map(|i| (i as f64 * 0.7).sin()).collect());
        for p in [1.0, 1.5, 2.0, 3.0] {
            let a = path_norm_dp(&g, &w, p).unwrap();
            let b = log_path_norm_dp(&g, &w, p).unwrap().exp();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn uniform_scaling_scales_by_depth_power() {
        let g = NetworkGraph::layered(&[3, 3, 2, 2]).unwrap();
        let w = WeightMap::new((0..g.num_edges()).map(|i| (i as f64 * 1.3).cos()).collect());
        let base = path_norm_dp(&g, &w, 2.0).unwrap();
        let scaled = path_norm_dp(&g, &w.scaled(1.7), 2.0).unwrap();
        assert!((scaled - 1.7f64.powi(3) * base).abs() < 1e-12 * scaled);
    }
}
