//! Oracle and invariance checks behind the `verify` subcommand.
//!
//! Every case is generated from its own seed, which is printed with any
//! counterexample so the failure can be replayed with [`random_case`].

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward::{backprop, mean_loss, softmax_cross_entropy, truncated_softmax_loss, loss_gradient, Batch, WeightMap};
use crate::graph::{Edge, NetworkGraph};
use crate::norms::{max_norm, path_norm_dp};
use crate::optim::{compute_path_scales, OptimizerState, PathScaleTable};
use crate::rescale::{balance, is_rescaling_equivalent, rescale_in_place, RescaleOp};

pub const P_VALUES: [f64; 4] = [1.0, 1.5, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub dags: usize,
    pub nets: usize,
    pub steps: usize,
    pub lemma_nets: usize,
    pub loss_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2015,
            dags: 200,
            nets: 20,
            steps: 100,
            lemma_nets: 50,
            loss_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub counterexample: Option<String>,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {:<38} cases={:<6} worst={:.3e} tol={:.1e} time={:.2}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance,
            self.seconds
        );
        if let Some(c) = &self.counterexample {
            let _ = write!(s, "\n     counterexample: {c}");
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        self.checks.iter().map(|c| c.line() + "\n").collect()
    }
}

/// Tracks the worst case of a check and the first failing one.
struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    counterexample: Option<String>,
    start: Instant,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
            counterexample: None,
            start: Instant::now(),
        }
    }

    fn record(&mut self, err: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        let bad = err.is_nan() || err > self.tolerance;
        if bad || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err.max(self.worst) };
        }
        if bad && self.counterexample.is_none() {
            self.counterexample = Some(describe());
        }
    }

    fn fail(&mut self, msg: String) {
        self.cases += 1;
        self.worst = f64::INFINITY;
        self.counterexample.get_or_insert(msg);
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            passed: self.counterexample.is_none(),
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            seconds: self.start.elapsed().as_secs_f64(),
            counterexample: self.counterexample,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Seed of case `i` within check `tag`.
pub fn case_seed(seed: u64, tag: u64, i: usize) -> u64 {
    let mut z = seed ^ tag.rotate_left(32) ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random DAG with at most `max_edges` edges and at most `max_depth` edge
/// layers. Every non-input node draws its sources from earlier node layers,
/// mostly the previous one, so skip connections appear regularly.
pub fn random_dag<R: Rng + ?Sized>(rng: &mut R, max_edges: usize, max_depth: usize) -> NetworkGraph {
    loop {
        let depth = rng.random_range(1..=max_depth.max(1));
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=3)).collect();
        let mut layer_of = Vec::new();
        for (l, &s) in sizes.iter().enumerate() {
            layer_of.extend(std::iter::repeat_n(l, s));
        }
        let n = layer_of.len();
        let mut edges: Vec<Edge> = Vec::new();
        let has = |edges: &mut Vec<Edge>, u: usize, v: usize| {
            if !edges.iter().any(|e| e.source == u && e.target == v) {
                edges.push(Edge { source: u, target: v });
            }
        };
        for v in 0..n {
            let lv = layer_of[v];
            if lv == 0 {
                continue;
            }
            let earlier: Vec<usize> = (0..n).filter(|&u| layer_of[u] < lv).collect();
            let prev: Vec<usize> = (0..n).filter(|&u| layer_of[u] + 1 == lv).collect();
            has(&mut edges, prev[rng.random_range(0..prev.len())], v);
            for &u in &earlier {
                if rng.random_bool(0.3) {
                    has(&mut edges, u, v);
                }
            }
        }
        for u in 0..n {
            if layer_of[u] < depth && !edges.iter().any(|e| e.source == u) {
                let later: Vec<usize> = (0..n).filter(|&v| layer_of[v] > layer_of[u]).collect();
                has(&mut edges, u, later[rng.random_range(0..later.len())]);
            }
        }
        if edges.len() > max_edges {
            continue;
        }
        let inputs = (0..n).filter(|&v| layer_of[v] == 0).collect();
        let outputs = (0..n).filter(|&v| layer_of[v] == depth).collect();
        if let Ok(g) = NetworkGraph::dag(n, inputs, outputs, edges) {
            return g;
        }
    }
}

pub fn uniform_weights<R: Rng + ?Sized>(rng: &mut R, g: &NetworkGraph, bound: f64) -> WeightMap {
    WeightMap::new((0..g.num_edges()).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// The graph, weights and `p` of oracle case `case_seed`.
pub fn random_case(case_seed: u64) -> (NetworkGraph, WeightMap, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let g = random_dag(&mut rng, 20, 4);
    let w = uniform_weights(&mut rng, &g, 2.0);
    let p = P_VALUES[rng.random_range(0..P_VALUES.len())];
    (g, w, p)
}

pub fn describe(g: &NetworkGraph, w: &WeightMap) -> String {
    let edges: Vec<String> = g.edges().iter().map(|e| format!("{}->{}", e.source, e.target)).collect();
    format!(
        "nodes={} inputs={:?} outputs={:?} edges=[{}] weights={:?}",
        g.num_nodes(),
        g.inputs(),
        g.outputs(),
        edges.join(","),
        w.as_slice()
    )
}

/// Products of `|w|^p` over every input-to-output path, from explicit
/// enumeration.
fn path_powers(g: &NetworkGraph, w: &WeightMap, p: f64, skip: Option<usize>) -> Result<Vec<(Vec<usize>, f64)>> {
    Ok(g.enumerate_paths()?
        .into_iter()
        .map(|path| {
            let prod = path
                .edges()
                .iter()
                .filter(|&&e| Some(e) != skip)
                .map(|&e| w[e].abs().powf(p))
                .product();
            (path.edges().to_vec(), prod)
        })
        .collect())
}

pub fn check_path_norm(opts: &VerifyOptions) -> CheckResult {
    let mut t = Tally::new("path norm: dynamic program vs enumeration", 1e-10);
    for i in 0..opts.dags {
        let cs = case_seed(opts.seed, 1, i);
        let (g, w, p) = random_case(cs);
        let dp = path_norm_dp(&g, &w, p);
        let brute = path_powers(&g, &w, p, None).map(|v| v.iter().map(|x| x.1).sum::<f64>().powf(1.0 / p));
        match (dp, brute) {
            (Ok(a), Ok(b)) => t.record(rel(a, b), || format!("case_seed={cs} p={p} dp={a} brute={b} {}", describe(&g, &w))),
            (Err(e), _) | (_, Err(e)) => t.fail(format!("case_seed={cs}: {e}")),
        }
    }
    t.finish()
}

pub type ScaleFn = dyn Fn(&NetworkGraph, &WeightMap, f64) -> Result<PathScaleTable>;

/// Compares `scales` with `(sum over paths through e of prod_{k != e} |w_k|^p)^(2/p)`.
pub fn check_path_scales_with(opts: &VerifyOptions, scales: &ScaleFn) -> CheckResult {
    let mut t = Tally::new("path scales: accumulators vs enumeration", 1e-10);
    for i in 0..opts.dags {
        let cs = case_seed(opts.seed, 1, i);
        let (g, w, p) = random_case(cs);
        let table = match scales(&g, &w, p) {
            Ok(s) => s,
            Err(e) => {
                t.fail(format!("case_seed={cs}: {e}"));
                continue;
            }
        };
        let mut worst = 0.0f64;
        let mut worst_edge = 0;
        let mut expected_at = 0.0;
        for e in 0..g.num_edges() {
            let through = match path_powers(&g, &w, p, Some(e)) {
                Ok(v) => v.into_iter().filter(|(edges, _)| edges.contains(&e)).map(|x| x.1).sum::<f64>(),
                Err(err) => {
                    t.fail(format!("case_seed={cs}: {err}"));
                    break;
                }
            };
            let expected = through.powf(2.0 / p);
            let r = rel(table.gamma_edge[e], expected);
            if r.is_nan() || r > worst {
                worst = if r.is_nan() { f64::INFINITY } else { r };
                worst_edge = e;
                expected_at = expected;
            }
        }
        t.record(worst, || {
            format!(
                "case_seed={cs} p={p} edge={worst_edge} got={} expected={expected_at} {}",
                table.gamma_edge[worst_edge],
                describe(&g, &w)
            )
        });
    }
    t.finish()
}

pub fn check_path_scales(opts: &VerifyOptions) -> CheckResult {
    check_path_scales_with(opts, &compute_path_scales)
}

/// A small layered net, a random rescaling of its weights and a batch.
pub fn rescaled_pair(case_seed: u64) -> (NetworkGraph, WeightMap, WeightMap, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let depth = rng.random_range(2..=3);
    let mut sizes = vec![rng.random_range(3..=5)];
    for _ in 1..depth {
        sizes.push(rng.random_range(3..=6));
    }
    sizes.push(rng.random_range(2..=3));
    let g = NetworkGraph::layered(&sizes).expect("valid layer sizes");
    let w = WeightMap::new(
        g.edges()
            .iter()
            .map(|e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / (g.fan_in(e.target) as f64).sqrt()
            })
            .collect(),
    );
    let hidden: Vec<usize> = g.hidden_nodes().collect();
    let mut w2 = w.clone();
    for _ in 0..rng.random_range(3..=10) {
        let v = hidden[rng.random_range(0..hidden.len())];
        let mag: f64 = rng.random_range(0.5..2.0);
        let c = if rng.random_bool(0.5) { mag.exp() } else { (-mag).exp() };
        rescale_in_place(&g, &mut w2, RescaleOp::new(v, c)).expect("hidden unit with positive factor");
    }
    let n = 8;
    let d = g.input_dim();
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..g.output_dim())).collect();
    (g, w, w2, Batch::new(x, y, d).expect("consistent batch"))
}

/// Runs full-batch steps from `w` and `w2` side by side; returns the first
/// step where the pair stops being equivalent and the largest relative gap
/// of the loss curves.
fn twin_run(
    g: &NetworkGraph,
    w: &WeightMap,
    w2: &WeightMap,
    batch: &Batch,
    mut state_a: OptimizerState,
    mut state_b: OptimizerState,
    steps: usize,
) -> Result<(Option<usize>, f64)> {
    let (mut a, mut b) = (w.clone(), w2.clone());
    let mut gap = 0.0f64;
    for step in 1..=steps {
        let (ga, la) = backprop(g, &a, batch)?;
        let (gb, lb) = backprop(g, &b, batch)?;
        gap = gap.max(rel(la, lb));
        state_a.step(g, &mut a, &ga)?;
        state_b.step(g, &mut b, &gb)?;
        if !is_rescaling_equivalent(g, &a, &b, 1e-6)? {
            return Ok((Some(step), gap));
        }
    }
    gap = gap.max(rel(mean_loss(g, &a, batch, 1.0)?, mean_loss(g, &b, batch, 1.0)?));
    Ok((None, gap))
}

pub const PATH_SGD_VERIFY_STEP: f64 = 0.01;
pub const SGD_VERIFY_STEP: f64 = 0.1;

/// Path-SGD from rescaling-equivalent starts stays equivalent, with matching
/// loss curves.
pub fn check_rescaling_invariance(opts: &VerifyOptions) -> CheckResult {
    let mut t = Tally::new("Path-SGD keeps rescaled twins equivalent", 1e-8);
    for i in 0..opts.nets {
        let cs = case_seed(opts.seed, 3, i);
        let (g, w, w2, batch) = rescaled_pair(cs);
        let mk = || OptimizerState::path_sgd(PATH_SGD_VERIFY_STEP, 2.0);
        match mk().and_then(|a| twin_run(&g, &w, &w2, &batch, a, mk()?, opts.steps)) {
            Ok((None, gap)) => t.record(gap, || format!("case_seed={cs} loss gap {gap:e} {}", describe(&g, &w))),
            Ok((Some(step), _)) => t.fail(format!("case_seed={cs} equivalence lost at step {step} {}", describe(&g, &w))),
            Err(e) => t.fail(format!("case_seed={cs}: {e}")),
        }
    }
    t.finish()
}

/// Negative control: plain SGD must break the equivalence within 10 steps.
pub fn check_sgd_breaks_equivalence(opts: &VerifyOptions) -> CheckResult {
    let mut t = Tally::new("SGD breaks rescaled twins (control)", 10.0);
    for i in 0..opts.nets {
        let cs = case_seed(opts.seed, 3, i);
        let (g, w, w2, batch) = rescaled_pair(cs);
        let n = g.num_edges();
        let mk = || OptimizerState::sgd(n, SGD_VERIFY_STEP, 0.0);
        match mk().and_then(|a| twin_run(&g, &w, &w2, &batch, a, mk()?, 10)) {
            Ok((Some(step), _)) => t.record(step as f64, String::new),
            Ok((None, _)) => t.fail(format!("case_seed={cs} still equivalent after 10 SGD steps {}", describe(&g, &w))),
            Err(e) => t.fail(format!("case_seed={cs}: {e}")),
        }
    }
    t.finish()
}

/// Small layered single-output net for the balance check.
pub fn lemma_case(case_seed: u64) -> (NetworkGraph, WeightMap, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let depth = rng.random_range(2..=4);
    let mut sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=4)).collect();
    sizes.push(1);
    let g = NetworkGraph::layered(&sizes).expect("valid layer sizes");
    let w = uniform_weights(&mut rng, &g, 2.0);
    let p = P_VALUES[rng.random_range(0..P_VALUES.len())];
    (g, w, p)
}

/// On layered single-output nets the path norm equals the `d`-th power of
/// the max-norm of the balanced weights, and no rescaling does better.
pub fn check_balance_lemma(opts: &VerifyOptions) -> CheckResult {
    let mut t = Tally::new("balanced max-norm power equals path norm", 1e-6);
    for i in 0..opts.lemma_nets {
        let cs = case_seed(opts.seed, 4, i);
        let (g, w, p) = lemma_case(cs);
        let d = g.depth() as i32;
        let result = (|| -> Result<(f64, f64, f64)> {
            let phi = path_norm_dp(&g, &w, p)?;
            let best = max_norm(&g, &balance(&g, &w, p)?, p)?.powi(d);
            let mut rng = ChaCha8Rng::seed_from_u64(cs ^ 0x5A5A);
            let hidden: Vec<usize> = g.hidden_nodes().collect();
            let mut lowest = f64::INFINITY;
            for _ in 0..100 {
                let mut v = w.clone();
                for &u in &hidden {
                    rescale_in_place(&g, &mut v, RescaleOp::new(u, rng.random_range(-2.0f64..2.0).exp()))?;
                }
                lowest = lowest.min(max_norm(&g, &v, p)?.powi(d));
            }
            Ok((phi, best, lowest))
        })();
        match result {
            Ok((phi, best, lowest)) => {
                let undercut = ((best - lowest) / best).max(0.0);
                let err = rel(phi, best).max(undercut);
                t.record(err, || {
                    format!("case_seed={cs} p={p} phi={phi} balanced={best} sampled_min={lowest} {}", describe(&g, &w))
                });
            }
            Err(e) => t.fail(format!("case_seed={cs}: {e}")),
        }
    }
    t.finish()
}

/// Truncation changes the loss by at most `3e-6` per wrong class and keeps
/// the gradient continuous at the branch point.
pub fn check_truncated_loss(opts: &VerifyOptions) -> CheckResult {
    let classes = 10;
    let mut t = Tally::new("truncated loss within bound of soft-max", 3e-6 * classes as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(opts.seed, 5, 0));
    for _ in 0..opts.loss_samples {
        let s: Vec<f64> = (0..classes).map(|_| rng.random_range(-30.0..=30.0)).collect();
        let y = rng.random_range(0..classes);
        match (truncated_softmax_loss(&s, y), softmax_cross_entropy(&s, y)) {
            (Ok(a), Ok(b)) => t.record((a - b).abs(), || format!("scores={s:?} label={y} truncated={a} exact={b}")),
            (Err(e), _) | (_, Err(e)) => t.fail(e.to_string()),
        }
    }
    let t = t.finish();
    let mut c = Tally::new("truncated loss gradient continuity", 1e-12);
    for h in [1e-13, 1e-14] {
        let below = loss_gradient(&[0.0, -11.0 - h], 0);
        let above = loss_gradient(&[0.0, -11.0 + h], 0);
        match (below, above) {
            (Ok(a), Ok(b)) => c.record((a[1] - b[1]).abs().max((a[0] - b[0]).abs()), || format!("h={h} below={a:?} above={b:?}")),
            (Err(e), _) | (_, Err(e)) => c.fail(e.to_string()),
        }
    }
    let c = c.finish();
    CheckResult {
        passed: t.passed && c.passed,
        counterexample: t.counterexample.or(c.counterexample),
        seconds: t.seconds + c.seconds,
        cases: t.cases + c.cases,
        ..t
    }
}

/// Floor on the denominator of the relative gradient error, so entries that
/// are numerically zero are compared absolutely.
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;
/// Cases where some hidden pre-activation is this close to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-2;

/// A net and batch for the gradient check with no hidden pre-activation
/// near the ReLU kink.
pub fn gradient_case(case_seed: u64) -> (NetworkGraph, WeightMap, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    loop {
        let g = random_dag(&mut rng, 20, 4);
        let w = uniform_weights(&mut rng, &g, 1.0);
        let n = 4;
        let d = g.input_dim();
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..g.output_dim())).collect();
        let batch = Batch::new(x, y, d).expect("consistent batch");
        let clear = (0..n).all(|i| {
            crate::forward::forward(&g, &w, batch.row(i))
                .map(|rec| g.hidden_nodes().all(|v| rec.pre[v].abs() > KINK_MARGIN))
                .unwrap_or(false)
        });
        if clear {
            return (g, w, batch);
        }
    }
}

pub fn check_gradients(opts: &VerifyOptions) -> CheckResult {
    let mut t = Tally::new("backprop vs central differences", 1e-5);
    for i in 0..opts.nets {
        let cs = case_seed(opts.seed, 6, i);
        let (g, w, batch) = gradient_case(cs);
        let result = (|| -> Result<(f64, usize)> {
            let (grad, _) = backprop(&g, &w, &batch)?;
            let mut worst = (0.0f64, 0);
            for e in 0..g.num_edges() {
                let (mut plus, mut minus) = (w.clone(), w.clone());
                plus[e] += FD_STEP;
                minus[e] -= FD_STEP;
                let fd = (mean_loss(&g, &plus, &batch, 1.0)? - mean_loss(&g, &minus, &batch, 1.0)?) / (2.0 * FD_STEP);
                let err = (fd - grad[e]).abs() / fd.abs().max(grad[e].abs()).max(GRADIENT_SCALE_FLOOR);
                if err > worst.0 {
                    worst = (err, e);
                }
            }
            Ok(worst)
        })();
        match result {
            Ok((err, e)) => t.record(err, || format!("case_seed={cs} edge={e} {}", describe(&g, &w))),
            Err(e) => t.fail(format!("case_seed={cs}: {e}")),
        }
    }
    t.finish()
}

/// Runs every check.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    VerifyReport {
        checks: vec![
            check_path_norm(opts),
            check_path_scales(opts),
            check_rescaling_invariance(opts),
            check_sgd_breaks_equivalence(opts),
            check_balance_lemma(opts),
            check_truncated_loss(opts),
            check_gradients(opts),
        ],
    }
}

/// Fails with a verification error naming the failed checks.
pub fn ensure_passed(report: &VerifyReport) -> Result<()> {
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Consistency(format!("failed checks: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_dags_respect_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut skips = 0;
        for _ in 0..300 {
            let g = random_dag(&mut rng, 20, 4);
            assert!(g.num_edges() <= 20);
            assert!(g.depth() <= 4);
            skips += g.edges().iter().filter(|e| g.level_in(e.target) > g.level_in(e.source) + 1).count();
        }
        assert!(skips > 0);
    }

    #[test]
    fn cases_replay_from_seed() {
        let (g1, w1, p1) = random_case(77);
        let (g2, w2, p2) = random_case(77);
        assert_eq!(g1.edges(), g2.edges());
        assert_eq!(w1, w2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn small_verify_run_passes() {
        let opts = VerifyOptions {
            dags: 20,
            nets: 3,
            steps: 20,
            lemma_nets: 5,
            loss_samples: 200,
            ..VerifyOptions::default()
        };
        let report = run_verify(&opts);
        assert!(report.passed(), "{}", report.render());
    }
}
