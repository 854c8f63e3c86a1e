//! Node rescaling, balancing, rescaling-equivalence testing and the balanced
//! and unbalanced initializations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::WeightMap;
use crate::graph::{NetworkGraph, NodeId, Role, DEFAULT_PATH_CAP};
use crate::norms::{self, abs_pow, check_p, root};

/// Multiply the incoming edges of a hidden node by `factor` and divide its
/// outgoing edges by the same amount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleOp {
    pub node: NodeId,
    pub factor: f64,
}

impl RescaleOp {
    pub fn new(node: NodeId, factor: f64) -> Self {
        Self { node, factor }
    }

    pub fn validate(&self, g: &NetworkGraph) -> Result<()> {
        if self.node >= g.num_nodes() {
            return Err(Error::InvalidRequest(format!("node {} does not exist", self.node)));
        }
        if g.role(self.node) != Role::Hidden {
            return Err(Error::RoleViolation(format!(
                "node {} is not a hidden unit and cannot be rescaled",
                self.node
            )));
        }
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::InvalidFactor(self.factor));
        }
        Ok(())
    }
}

pub fn rescale(g: &NetworkGraph, w: &WeightMap, op: RescaleOp) -> Result<WeightMap> {
    let mut out = w.clone();
    rescale_in_place(g, &mut out, op)?;
    Ok(out)
}

pub fn rescale_in_place(g: &NetworkGraph, w: &mut WeightMap, op: RescaleOp) -> Result<()> {
    op.validate(g)?;
    if w.len() != g.num_edges() {
        return Err(Error::Shape {
            expected: g.num_edges(),
            actual: w.len(),
        });
    }
    apply_factor(g, w, op.node, op.factor);
    Ok(())
}

fn apply_factor(g: &NetworkGraph, w: &mut WeightMap, v: NodeId, c: f64) {
    for &e in g.incoming(v) {
        w[e] *= c;
    }
    for &e in g.outgoing(v) {
        w[e] /= c;
    }
}

fn check_degenerate(g: &NetworkGraph, w: &WeightMap) -> Result<()> {
    for v in g.hidden_nodes() {
        let dead_in = g.incoming(v).iter().all(|&e| w[e] == 0.0);
        let dead_out = g.outgoing(v).iter().all(|&e| w[e] == 0.0);
        if dead_in || dead_out {
            return Err(Error::DegenerateUnit(v));
        }
    }
    Ok(())
}

const BALANCE_TOLERANCE: f64 = 1e-10;
const BALANCE_MAX_SWEEPS: usize = 10_000;

/// Result of [`balance_with_report`].
#[derive(Debug, Clone)]
pub struct Balanced {
    pub weights: WeightMap,
    pub max_norm: f64,
    /// Coordinate-descent sweeps that changed the max-norm by more than the
    /// stopping tolerance.
    pub sweeps: usize,
}

/// Rescaling-equivalent weights that minimize `mu_{p,inf}`.
pub fn balance(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<WeightMap> {
    Ok(balance_with_report(g, w, p)?.weights)
}

/// Balancing starts from the closed-form point
/// `c_v = gamma_in(v)^(-1/p) * lambda^level(v)`, which equalizes every hidden
/// unit at norm `lambda` and the worst output unit at the same value (the
/// exact optimum on layered graphs), then runs cyclic coordinate descent over
/// hidden nodes. Each coordinate step moves `c_v` to the crossing point of the
/// node's own (increasing) norm and its successors' (decreasing) norms.
pub fn balance_with_report(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<Balanced> {
    check_p(p)?;
    w.validate(g)?;
    check_degenerate(g, w)?;

    let start_mu = norms::max_norm(g, w, p)?;
    let mut current = w.clone();
    if g.num_hidden() > 0 {
        let seeded = closed_form_start(g, w, p);
        if let Some(seeded) = seeded {
            if norms::max_norm(g, &seeded, p)? <= start_mu {
                current = seeded;
            }
        }
    }

    let mut sums = norms::incoming_power_sums(g, &current, p);
    let mut mu = max_from_sums(&sums, p);
    let hidden: Vec<NodeId> = g.topo_order().iter().copied().filter(|&v| g.is_hidden(v)).collect();
    let mut sweeps = 0;
    for _ in 0..BALANCE_MAX_SWEEPS {
        for &v in &hidden {
            coordinate_step(g, &mut current, &mut sums, v, p);
        }
        let next = max_from_sums(&sums, p);
        let change = (mu - next).abs() / mu.max(f64::MIN_POSITIVE);
        mu = next;
        if change < BALANCE_TOLERANCE {
            break;
        }
        sweeps += 1;
    }
    Ok(Balanced {
        weights: current,
        max_norm: mu,
        sweeps,
    })
}

fn max_from_sums(sums: &[f64], p: f64) -> f64 {
    sums.iter().map(|&s| root(s, p)).fold(0.0, f64::max)
}

fn closed_form_start(g: &NetworkGraph, w: &WeightMap, p: f64) -> Option<WeightMap> {
    let log_gamma: Vec<f64> = norms::gamma_in(g, w, p).iter().map(|x| x.ln()).collect();
    if log_gamma.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let depth = g.depth() as f64;
    let worst_out = g
        .outputs()
        .iter()
        .map(|&v| log_gamma[v])
        .fold(f64::NEG_INFINITY, f64::max);
    let log_lambda = worst_out / (p * depth);
    let log_c: Vec<f64> = (0..g.num_nodes())
        .map(|v| {
            if g.is_hidden(v) {
                -log_gamma[v] / p + g.level_in(v) as f64 * log_lambda
            } else {
                0.0
            }
        })
        .collect();
    let mut out = w.clone();
    for (e, edge) in g.edges().iter().enumerate() {
        out[e] *= (log_c[edge.target] - log_c[edge.source]).exp();
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn coordinate_step(g: &NetworkGraph, w: &mut WeightMap, sums: &mut [f64], v: NodeId, p: f64) {
    let own = root(sums[v], p);
    let succ: Vec<(f64, f64)> = g
        .outgoing(v)
        .iter()
        .map(|&e| {
            let t = g.edge(e).target;
            let b = abs_pow(w[e], p);
            ((sums[t] - b).max(0.0), b)
        })
        .collect();
    let succ_max = |c: f64| {
        succ.iter()
            .map(|&(rest, b)| root(rest + b / abs_pow(c, p), p))
            .fold(0.0, f64::max)
    };
    let gap = |log_c: f64| {
        let c = log_c.exp();
        c * own - succ_max(c)
    };
    // Bracket the crossing in log space.
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while gap(lo) > 0.0 && lo > -700.0 {
        lo *= 2.0;
    }
    while gap(hi) < 0.0 && hi < 700.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = (0.5 * (lo + hi)).exp();
    let before = own.max(succ_max(1.0));
    let after = (c * own).max(succ_max(c));
    if after.partial_cmp(&before) != Some(std::cmp::Ordering::Less) || !c.is_finite() {
        return;
    }
    apply_factor(g, w, v, c);
    sums[v] = g.incoming(v).iter().map(|&e| abs_pow(w[e], p)).sum();
    for &e in g.outgoing(v) {
        let t = g.edge(e).target;
        sums[t] = g.incoming(t).iter().map(|&e2| abs_pow(w[e2], p)).sum();
    }
}

/// Unique representative of a rescaling-equivalence class: hidden units are
/// visited in topological order and rescaled so their incoming weights have
/// unit l_2 norm. All scale ends up on the edges into output units.
pub fn canonical_form(g: &NetworkGraph, w: &WeightMap) -> Result<WeightMap> {
    w.validate(g)?;
    check_degenerate(g, w)?;
    let mut out = w.clone();
    for &v in g.topo_order() {
        if !g.is_hidden(v) {
            continue;
        }
        let norm = g.incoming(v).iter().map(|&e| out[e] * out[e]).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateUnit(v));
        }
        apply_factor(g, &mut out, v, 1.0 / norm);
    }
    Ok(out)
}

/// Largest per-unit deviation between two canonical forms, relative to the
/// larger incoming-weight magnitude of each unit.
fn canonical_distance(g: &NetworkGraph, a: &WeightMap, b: &WeightMap) -> f64 {
    let mut worst = 0.0f64;
    for v in 0..g.num_nodes() {
        let inc = g.incoming(v);
        if inc.is_empty() {
            continue;
        }
        let scale = inc.iter().map(|&e| a[e].abs().max(b[e].abs())).fold(0.0, f64::max);
        let diff = inc.iter().map(|&e| (a[e] - b[e]).abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Whether `w1 ~ w2` up to `tol`. The canonical forms must agree unit by unit;
/// on graphs small enough to enumerate, the path vectors must agree as well.
pub fn is_rescaling_equivalent(g: &NetworkGraph, w1: &WeightMap, w2: &WeightMap, tol: f64) -> Result<bool> {
    let a = canonical_form(g, w1)?;
    let b = canonical_form(g, w2)?;
    if canonical_distance(g, &a, &b) > tol {
        return Ok(false);
    }
    if g.path_count() <= DEFAULT_PATH_CAP as u128 {
        let pa = norms::path_vector(g, w1)?;
        let pb = norms::path_vector(g, w2)?;
        if pa.max_relative_difference(&pb) > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Weights into node `v` drawn i.i.d. from `N(0, 1/fan_in(v))`.
pub fn init_balanced(g: &NetworkGraph, seed: u64) -> WeightMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = g
        .edges()
        .iter()
        .map(|edge| {
            let z: f64 = rng.sample(StandardNormal);
            z / (g.fan_in(edge.target) as f64).sqrt()
        })
        .collect();
    WeightMap::new(values)
}

/// Picks `n_units` hidden units uniformly with replacement and applies
/// `rho_{10c, v}` to each, with `c` drawn from the standard log-normal.
pub fn init_unbalanced(g: &NetworkGraph, w: &WeightMap, seed: u64, n_units: usize) -> Result<WeightMap> {
    let hidden: Vec<NodeId> = g.hidden_nodes().collect();
    if hidden.is_empty() {
        return Err(Error::InvalidRequest("graph has no hidden units to rescale".into()));
    }
    if w.len() != g.num_edges() {
        return Err(Error::Shape {
            expected: g.num_edges(),
            actual: w.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = w.clone();
    for _ in 0..n_units {
        let v = hidden[rng.random_range(0..hidden.len())];
        let z: f64 = rng.sample(StandardNormal);
        apply_factor(g, &mut out, v, 10.0 * z.exp());
    }
    Ok(out)
}
