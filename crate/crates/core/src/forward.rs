//! Forward evaluation, the truncated soft-max loss, reverse-mode gradients and
//! 0/1 error.
//!
//! Hidden nodes apply ReLU; output nodes carry raw scores. There are no bias
//! terms. The ReLU derivative at exactly zero is taken as zero.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, NetworkGraph, Role};
use crate::optim::DropoutMask;

/// Edge weights, indexed by [`EdgeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    values: Vec<f64>,
}

impl WeightMap {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// Checks the weights against `g`: one finite entry per edge.
    pub fn for_graph(g: &NetworkGraph, values: Vec<f64>) -> Result<Self> {
        let w = Self::new(values);
        w.validate(g)?;
        Ok(w)
    }

    pub fn validate(&self, g: &NetworkGraph) -> Result<()> {
        if self.values.len() != g.num_edges() {
            return Err(Error::Shape {
                expected: g.num_edges(),
                actual: self.values.len(),
            });
        }
        if let Some(e) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("weight of edge {e} is {}", self.values[e])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

impl Index<EdgeId> for WeightMap {
    type Output = f64;

    fn index(&self, e: EdgeId) -> &f64 {
        &self.values[e]
    }
}

impl IndexMut<EdgeId> for WeightMap {
    fn index_mut(&mut self, e: EdgeId) -> &mut f64 {
        &mut self.values[e]
    }
}

/// Row-major `n x dim` inputs with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Shape {
                expected: labels.len() * dim,
                actual: inputs.len(),
            });
        }
        Ok(Self { inputs, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Copies the listed rows into a new batch.
    pub fn gather(&self, rows: &[usize]) -> Batch {
        let mut out = Batch {
            inputs: Vec::with_capacity(rows.len() * self.dim),
            labels: Vec::with_capacity(rows.len()),
            dim: self.dim,
        };
        self.gather_into(rows, &mut out);
        out
    }

    pub fn gather_into(&self, rows: &[usize], out: &mut Batch) {
        out.dim = self.dim;
        out.inputs.clear();
        out.labels.clear();
        for &r in rows {
            out.inputs.extend_from_slice(self.row(r));
            out.labels.push(self.labels[r]);
        }
    }

    fn check(&self, g: &NetworkGraph) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidRequest("empty batch".into()));
        }
        if self.dim != g.input_dim() {
            return Err(Error::Shape {
                expected: g.input_dim(),
                actual: self.dim,
            });
        }
        let c = g.output_dim();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidParams(format!("label {bad} out of range for {c} classes")));
        }
        Ok(())
    }
}

/// Per-node pre- and post-activations for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    scores: Vec<f64>,
}

impl ActivationRecord {
    /// Raw output scores in output-node order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Evaluates the network on a single input vector.
pub fn forward(g: &NetworkGraph, w: &WeightMap, x: &[f64]) -> Result<ActivationRecord> {
    w.validate(g)?;
    if x.len() != g.input_dim() {
        return Err(Error::Shape {
            expected: g.input_dim(),
            actual: x.len(),
        });
    }
    let mut ws = Workspace::new(g);
    ws.forward(g, w.as_slice(), x, None, 1.0);
    Ok(ActivationRecord {
        pre: ws.pre.clone(),
        post: ws.post.clone(),
        scores: ws.scores().to_vec(),
    })
}

/// Output scores only; `hidden_scale` multiplies every hidden activation.
pub fn scores(g: &NetworkGraph, w: &WeightMap, x: &[f64], hidden_scale: f64) -> Result<Vec<f64>> {
    w.validate(g)?;
    if x.len() != g.input_dim() {
        return Err(Error::Shape {
            expected: g.input_dim(),
            actual: x.len(),
        });
    }
    let mut ws = Workspace::new(g);
    ws.forward(g, w.as_slice(), x, None, hidden_scale);
    Ok(ws.scores().to_vec())
}

const TRUNCATION_POINT: f64 = -11.0;
const ZERO_POINT: f64 = -13.0;

/// `ln f(x)` for the truncated exponential.
fn log_f(x: f64) -> f64 {
    if x >= TRUNCATION_POINT {
        x
    } else if x > ZERO_POINT {
        TRUNCATION_POINT + 2.0 * ((x - ZERO_POINT) / 2.0).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln f'(x)`.
fn log_f_prime(x: f64) -> f64 {
    if x >= TRUNCATION_POINT {
        x
    } else if x > ZERO_POINT {
        TRUNCATION_POINT + ((x - ZERO_POINT) / 2.0).ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn check_scores(scores: &[f64], label: usize) -> Result<()> {
    if label >= scores.len() {
        return Err(Error::InvalidParams(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    Ok(())
}

/// `ln sum_i exp(t_i)` where the label term is known to be `t_c = 0`.
fn log_sum_with_unit(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(0.0f64, f64::max);
    if m == 0.0 {
        terms.map(f64::exp).sum::<f64>().ln_1p()
    } else {
        m + ((-m).exp() + terms.map(|t| (t - m).exp()).sum::<f64>()).ln()
    }
}

/// Truncated soft-max cross-entropy `ln sum_i f(s_i - s_c)`, where `f` is
/// `exp` above -11 and `exp(-11) [x+13]_+^2 / 4` below. It is exactly zero
/// once every wrong-class margin reaches 13.
pub fn truncated_softmax_loss(scores: &[f64], label: usize) -> Result<f64> {
    check_scores(scores, label)?;
    Ok(truncated_loss_unchecked(scores, label))
}

fn truncated_loss_unchecked(scores: &[f64], label: usize) -> f64 {
    let sc = scores[label];
    let off = scores
        .iter()
        .enumerate()
        .filter(move |&(i, _)| i != label)
        .map(move |(_, &s)| log_f(s - sc));
    log_sum_with_unit(off)
}

/// Standard soft-max cross-entropy `ln sum_i exp(s_i - s_c)`.
pub fn softmax_cross_entropy(scores: &[f64], label: usize) -> Result<f64> {
    check_scores(scores, label)?;
    let sc = scores[label];
    let off = scores
        .iter()
        .enumerate()
        .filter(move |&(i, _)| i != label)
        .map(move |(_, &s)| s - sc);
    Ok(log_sum_with_unit(off))
}

/// Exact gradient of [`truncated_softmax_loss`] with respect to the scores.
pub fn loss_gradient(scores: &[f64], label: usize) -> Result<Vec<f64>> {
    check_scores(scores, label)?;
    let mut out = vec![0.0; scores.len()];
    truncated_loss_and_grad(scores, label, 1.0, &mut out);
    Ok(out)
}

/// Writes `scale * dloss/ds` into `grad` and returns the loss.
fn truncated_loss_and_grad(scores: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let loss = truncated_loss_unchecked(scores, label);
    let sc = scores[label];
    let mut label_grad = 0.0;
    for (i, (&s, g)) in scores.iter().zip(grad.iter_mut()).enumerate() {
        if i == label {
            continue;
        }
        let d = (log_f_prime(s - sc) - loss).exp() * scale;
        *g = d;
        label_grad -= d;
    }
    grad[label] = label_grad;
    loss
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Reusable per-node buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    pre: Vec<f64>,
    post: Vec<f64>,
    scores: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Workspace {
    pub fn new(g: &NetworkGraph) -> Self {
        let n = g.num_nodes();
        Self {
            pre: vec![0.0; n],
            post: vec![0.0; n],
            scores: vec![0.0; g.output_dim()],
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Forward pass. Dropped hidden units output zero; every hidden
    /// activation is multiplied by `hidden_scale`.
    pub(crate) fn forward(
        &mut self,
        g: &NetworkGraph,
        w: &[f64],
        x: &[f64],
        mask: Option<&DropoutMask>,
        hidden_scale: f64,
    ) {
        let edges = g.edges();
        for &v in g.topo_order() {
            match g.role(v) {
                Role::Input => {
                    let xv = x[g.input_slot(v).unwrap_or_default()];
                    self.pre[v] = xv;
                    self.post[v] = xv;
                }
                role => {
                    let z = match g.contiguous_run(v) {
                        Some(run) => dot(
                            &w[run.first_edge..run.first_edge + run.len],
                            &self.post[run.first_source..run.first_source + run.len],
                        ),
                        None => g
                            .incoming(v)
                            .iter()
                            .map(|&e| w[e] * self.post[edges[e].source])
                            .sum(),
                    };
                    self.pre[v] = z;
                    self.post[v] = if role == Role::Output {
                        self.scores[g.output_slot(v).unwrap_or_default()] = z;
                        z
                    } else if mask.is_some_and(|m| !m.is_retained(v)) {
                        0.0
                    } else {
                        z.max(0.0) * hidden_scale
                    };
                }
            }
        }
    }
}

/// Examples processed together by [`BlockWorkspace`].
const BLOCK: usize = 32;

/// Node-major buffers for a block of examples: row `v` holds the values of
/// node `v` for every example in the block, so each weight is read once per
/// block rather than once per example.
#[derive(Debug, Clone)]
struct BlockWorkspace {
    pre: Vec<f64>,
    post: Vec<f64>,
    delta: Vec<f64>,
    scores: Vec<f64>,
    dscores: Vec<f64>,
}

fn row(buf: &[f64], v: usize) -> &[f64] {
    &buf[v * BLOCK..(v + 1) * BLOCK]
}

fn row_mut(buf: &mut [f64], v: usize) -> &mut [f64] {
    &mut buf[v * BLOCK..(v + 1) * BLOCK]
}

impl BlockWorkspace {
    fn new(g: &NetworkGraph) -> Self {
        let n = g.num_nodes() * BLOCK;
        Self {
            pre: vec![0.0; n],
            post: vec![0.0; n],
            delta: vec![0.0; n],
            scores: vec![0.0; g.output_dim()],
            dscores: vec![0.0; g.output_dim()],
        }
    }

    /// Forward pass over examples `start..start + len` of `batch`. Unused
    /// lanes of a short block are zero.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &mut self,
        g: &NetworkGraph,
        w: &[f64],
        batch: &Batch,
        start: usize,
        len: usize,
        mask: Option<&DropoutMask>,
        hidden_scale: f64,
    ) {
        let edges = g.edges();
        for (slot, &v) in g.inputs().iter().enumerate() {
            let r = row_mut(&mut self.post, v);
            r.fill(0.0);
            for (b, x) in r.iter_mut().take(len).enumerate() {
                *x = batch.row(start + b)[slot];
            }
        }
        let mut z = [0.0f64; BLOCK];
        for &v in g.topo_order() {
            let role = g.role(v);
            if role == Role::Input {
                continue;
            }
            z.fill(0.0);
            match g.contiguous_run(v) {
                Some(run) => {
                    for k in 0..run.len {
                        axpy(w[run.first_edge + k], row(&self.post, run.first_source + k), &mut z);
                    }
                }
                None => {
                    for &e in g.incoming(v) {
                        axpy(w[e], row(&self.post, edges[e].source), &mut z);
                    }
                }
            }
            row_mut(&mut self.pre, v).copy_from_slice(&z);
            let out = row_mut(&mut self.post, v);
            if role == Role::Output {
                out.copy_from_slice(&z);
            } else if mask.is_some_and(|m| !m.is_retained(v)) {
                out.fill(0.0);
            } else {
                for (o, &zb) in out.iter_mut().zip(&z) {
                    *o = zb.max(0.0) * hidden_scale;
                }
            }
        }
    }

    /// Copies the scores of lane `b` into `self.scores`.
    fn load_scores(&mut self, g: &NetworkGraph, b: usize) {
        for (slot, &v) in g.outputs().iter().enumerate() {
            self.scores[slot] = self.post[v * BLOCK + b];
        }
    }

    /// Backward pass from the output rows of `self.delta`, accumulating the
    /// weight gradient into `grad`.
    fn backward(&mut self, g: &NetworkGraph, w: &[f64], mask: Option<&DropoutMask>, grad: &mut [f64]) {
        let edges = g.edges();
        let mut dv = [0.0f64; BLOCK];
        for &v in g.topo_order().iter().rev() {
            match g.role(v) {
                Role::Input => continue,
                Role::Output => dv.copy_from_slice(row(&self.delta, v)),
                Role::Hidden => {
                    if mask.is_some_and(|m| !m.is_retained(v)) {
                        continue;
                    }
                    let (d, p) = (row(&self.delta, v), row(&self.pre, v));
                    for b in 0..BLOCK {
                        dv[b] = if p[b] > 0.0 { d[b] } else { 0.0 };
                    }
                }
            }
            if dv.iter().all(|&d| d == 0.0) {
                continue;
            }
            let mut visit = |e: EdgeId, u: usize, delta: &mut [f64], post: &[f64]| {
                grad[e] += dot(&dv, row(post, u));
                axpy(w[e], &dv, row_mut(delta, u));
            };
            match g.contiguous_run(v) {
                Some(run) => {
                    for k in 0..run.len {
                        visit(run.first_edge + k, run.first_source + k, &mut self.delta, &self.post);
                    }
                }
                None => {
                    for &e in g.incoming(v) {
                        visit(e, edges[e].source, &mut self.delta, &self.post);
                    }
                }
            }
        }
    }

    /// Mean truncated loss over `batch` and its gradient (written into
    /// `grad`, which is overwritten).
    fn loss_and_gradient(
        &mut self,
        g: &NetworkGraph,
        w: &[f64],
        batch: &Batch,
        mask: Option<&DropoutMask>,
        grad: &mut [f64],
    ) -> Result<f64> {
        grad.fill(0.0);
        let n = batch.len();
        let inv = 1.0 / n as f64;
        let mut total = 0.0;
        for start in (0..n).step_by(BLOCK) {
            let len = BLOCK.min(n - start);
            self.forward(g, w, batch, start, len, mask, 1.0);
            self.delta.fill(0.0);
            for b in 0..len {
                self.load_scores(g, b);
                if self.scores.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite score on example {}", start + b)));
                }
                let y = batch.label(start + b);
                total += truncated_loss_and_grad(&self.scores, y, inv, &mut self.dscores);
                for (slot, &v) in g.outputs().iter().enumerate() {
                    self.delta[v * BLOCK + b] = self.dscores[slot];
                }
            }
            self.backward(g, w, mask, grad);
        }
        let loss = total * inv;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok(loss)
    }
}

/// Mean loss and its exact gradient over a batch.
pub fn backprop(g: &NetworkGraph, w: &WeightMap, batch: &Batch) -> Result<(WeightMap, f64)> {
    backprop_masked(g, w, batch, None)
}

/// As [`backprop`], with dropped hidden units contributing nothing.
pub fn backprop_masked(
    g: &NetworkGraph,
    w: &WeightMap,
    batch: &Batch,
    mask: Option<&DropoutMask>,
) -> Result<(WeightMap, f64)> {
    w.validate(g)?;
    batch.check(g)?;
    let mut ws = BlockWorkspace::new(g);
    let mut grad = WeightMap::zeros(g.num_edges());
    let loss = ws.loss_and_gradient(g, w.as_slice(), batch, mask, grad.as_mut_slice())?;
    Ok((grad, loss))
}

/// Mean truncated loss over a batch, without gradients. `hidden_scale` is the
/// inference-time dropout rescaling (1 when dropout is off).
pub fn mean_loss(g: &NetworkGraph, w: &WeightMap, batch: &Batch, hidden_scale: f64) -> Result<f64> {
    Ok(evaluate(g, w, batch, hidden_scale)?.loss)
}

/// Fraction of examples whose arg-max score differs from the label.
pub fn error_rate(g: &NetworkGraph, w: &WeightMap, batch: &Batch) -> Result<f64> {
    Ok(evaluate(g, w, batch, 1.0)?.error)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error: f64,
}

/// Mean truncated loss and 0/1 error in one pass.
pub fn evaluate(g: &NetworkGraph, w: &WeightMap, batch: &Batch, hidden_scale: f64) -> Result<Evaluation> {
    w.validate(g)?;
    batch.check(g)?;
    let mut ws = BlockWorkspace::new(g);
    let mut total = 0.0;
    let mut wrong = 0usize;
    for start in (0..batch.len()).step_by(BLOCK) {
        let len = BLOCK.min(batch.len() - start);
        ws.forward(g, w.as_slice(), batch, start, len, None, hidden_scale);
        for b in 0..len {
            ws.load_scores(g, b);
            let y = batch.label(start + b);
            if ws.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Numeric(format!("non-finite score on example {}", start + b)));
            }
            total += truncated_loss_unchecked(&ws.scores, y);
            if argmax(&ws.scores) != y {
                wrong += 1;
            }
        }
    }
    Ok(Evaluation {
        loss: total / batch.len() as f64,
        error: wrong as f64 / batch.len() as f64,
    })
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
    fn forward_by_hand() {
        let (g, w) = tiny();
        let r = forward(&g, &w, &[1.0, 1.0]).unwrap();
        assert_eq!(r.pre[2], 5.0);
        assert_eq!(r.post[2], 5.0);
        assert_eq!(r.scores(), &[20.0]);
        let r = forward(&g, &w, &[-1.0, 0.0]).unwrap();
        assert_eq!(r.pre[2], -2.0);
        assert_eq!(r.post[2], 0.0);
        assert_eq!(r.scores(), &[0.0]);
    }

    #[test]
    fn zero_weights_zero_outputs() {
        let g = NetworkGraph::layered(&[3, 4, 2]).unwrap();
        let w = WeightMap::zeros(g.num_edges());
        let r = forward(&g, &w, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(r.scores(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_shape_errors() {
        let (g, w) = tiny();
        assert!(matches!(forward(&g, &w, &[1.0]), Err(Error::Shape { .. })));
        let short = WeightMap::new(vec![1.0, 2.0]);
        assert!(matches!(forward(&g, &short, &[1.0, 1.0]), Err(Error::Shape { .. })));
        let bad = WeightMap::new(vec![1.0, f64::NAN, 2.0]);
        assert!(matches!(forward(&g, &bad, &[1.0, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn indirect_and_contiguous_forward_agree() {
        // Same 2-1-1 net but with edges listed out of order, so nodes take the
        // indirect path.
        let g = NetworkGraph::dag(
            4,
            vec![0, 1],
            vec![3],
            vec![
                Edge { source: 2, target: 3 },
                Edge { source: 1, target: 2 },
                Edge { source: 0, target: 2 },
            ],
        )
        .unwrap();
        assert!(g.contiguous_run(2).is_none());
        let w = WeightMap::new(vec![4.0, 3.0, 2.0]);
        let r = forward(&g, &w, &[1.0, 1.0]).unwrap();
        assert_eq!(r.scores(), &[20.0]);
    }

    #[test]
    fn truncated_loss_values() {
        assert_eq!(truncated_softmax_loss(&[0.0, 0.0], 0).unwrap(), 2f64.ln());
        assert_eq!(truncated_softmax_loss(&[20.0, 0.0], 0).unwrap(), 0.0);
        let at_kink = truncated_softmax_loss(&[0.0, -11.0], 0).unwrap();
        assert!((at_kink - (-11f64).exp().ln_1p()).abs() < 1e-18);
        // Exactly zero at margin 13.
        assert_eq!(truncated_softmax_loss(&[13.0, 0.0, -5.0], 0).unwrap(), 0.0);
        assert!(truncated_softmax_loss(&[12.9, 0.0], 0).unwrap() > 0.0);
    }

    #[test]
    fn truncated_loss_errors() {
        assert!(matches!(truncated_softmax_loss(&[0.0, f64::NAN], 0), Err(Error::Numeric(_))));
        assert!(matches!(truncated_softmax_loss(&[0.0, 1.0], 2), Err(Error::InvalidParams(_))));
        assert!(matches!(loss_gradient(&[f64::INFINITY, 1.0], 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn loss_gradient_values() {
        let g = loss_gradient(&[0.0, 0.0], 0).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let g = loss_gradient(&[20.0, 0.0], 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn branches_meet_at_truncation_point() {
        let x = TRUNCATION_POINT;
        let below = TRUNCATION_POINT + 2.0 * ((x - ZERO_POINT) / 2.0).ln();
        let below_prime = TRUNCATION_POINT + ((x - ZERO_POINT) / 2.0).ln();
        assert!((below - x).abs() < 1e-12);
        assert!((below_prime - x).abs() < 1e-12);
    }

    #[test]
    fn huge_margins_stay_finite() {
        let l = truncated_softmax_loss(&[0.0, 1e6], 0).unwrap();
        assert!((l - 1e6).abs() < 1e-6);
        let g = loss_gradient(&[0.0, 1e6], 0).unwrap();
        assert!((g[1] - 1.0).abs() < 1e-12 && (g[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let (g, w) = tiny();
        let batch = Batch::new(vec![-1.0, 0.0], vec![0], 2).unwrap();
        // Single output: loss is ln(1) = 0 regardless, so use two outputs.
        let (grad, _) = backprop(&g, &w, &batch).unwrap();
        assert_eq!(grad.as_slice(), &[0.0, 0.0, 0.0]);

        let g2 = NetworkGraph::layered(&[2, 1, 2]).unwrap();
        let w2 = WeightMap::new(vec![2.0, 3.0, 4.0, -1.0]);
        let b2 = Batch::new(vec![-1.0, 0.0], vec![1], 2).unwrap();
        let (grad, loss) = backprop(&g2, &w2, &b2).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn repeated_examples_match_single() {
        let g = NetworkGraph::layered(&[3, 4, 3]).unwrap();
        let w = WeightMap::new((0..g.num_edges()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect());
        let x = vec![0.5, -0.25, 1.0];
        let one = Batch::new(x.clone(), vec![2], 3).unwrap();
        let many = Batch::new(x.repeat(5), vec![2; 5], 3).unwrap();
        let (g1, l1) = backprop(&g, &w, &one).unwrap();
        let (g5, l5) = backprop(&g, &w, &many).unwrap();
        assert!((l1 - l5).abs() < 1e-14);
        for (a, b) in g1.iter().zip(g5.iter()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn blocked_batch_matches_per_example_sums() {
        // 2 * BLOCK + 5 examples, so the last block is partly empty.
        let g = NetworkGraph::layered(&[3, 5, 4, 3]).unwrap();
        let w = WeightMap::new((0..g.num_edges()).map(|i| ((i * 29 % 13) as f64 - 6.0) / 5.0).collect());
        let n = 2 * BLOCK + 5;
        let x: Vec<f64> = (0..3 * n).map(|i| ((i * 17 % 23) as f64 - 11.0) / 9.0).collect();
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let batch = Batch::new(x, y, 3).unwrap();
        let (grad, loss) = backprop(&g, &w, &batch).unwrap();
        let mut sum_grad = vec![0.0; g.num_edges()];
        let mut sum_loss = 0.0;
        let mut wrong = 0;
        for i in 0..n {
            let one = batch.gather(&[i]);
            let (gi, li) = backprop(&g, &w, &one).unwrap();
            sum_loss += li / n as f64;
            for (s, v) in sum_grad.iter_mut().zip(gi.iter()) {
                *s += v / n as f64;
            }
            let s = scores(&g, &w, batch.row(i), 1.0).unwrap();
            assert!((truncated_softmax_loss(&s, batch.label(i)).unwrap() - li).abs() < 1e-12);
            wrong += usize::from(argmax(&s) != batch.label(i));
        }
        assert!((loss - sum_loss).abs() < 1e-12);
        for (a, b) in grad.iter().zip(&sum_grad) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let ev = evaluate(&g, &w, &batch, 1.0).unwrap();
        assert!((ev.loss - loss).abs() < 1e-12);
        assert_eq!(ev.error, wrong as f64 / n as f64);
    }

    #[test]
    fn error_rate_tie_break() {
        let g = NetworkGraph::layered(&[2, 2, 3]).unwrap();
        let w = WeightMap::zeros(g.num_edges());
        let labels = vec![0, 1, 2, 0, 1];
        let batch = Batch::new(vec![1.0; 10], labels, 2).unwrap();
        // Uniform scores pick class 0, so 3 of 5 are wrong.
        assert_eq!(error_rate(&g, &w, &batch).unwrap(), 0.6);
    }

    #[test]
    fn error_rate_separated() {
        let g = NetworkGraph::layered(&[2, 2]).unwrap();
        // Output 0 copies input 0, output 1 copies input 1.
        let w = WeightMap::new(vec![1.0, 0.0, 0.0, 1.0]);
        let batch = Batch::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        assert_eq!(error_rate(&g, &w, &batch).unwrap(), 0.0);
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(vec![1.0; 5], vec![0, 1], 2).is_err());
        let (g, w) = tiny();
        let b = Batch::new(vec![1.0, 1.0], vec![3], 2).unwrap();
        assert!(matches!(backprop(&g, &w, &b), Err(Error::InvalidParams(_))));
        let b = Batch::new(vec![1.0, 1.0, 1.0], vec![0], 3).unwrap();
        assert!(matches!(backprop(&g, &w, &b), Err(Error::Shape { .. })));
    }
}
