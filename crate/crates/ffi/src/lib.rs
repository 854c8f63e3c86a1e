//! C interface to `pathsgd`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_init`/`*_layered`
//! functions and released with the matching `*_free`. Fallible functions
//! return a status code; on failure the message is available from
//! [`pathsgd_last_error`] on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pathsgd::forward::{backprop, scores};
use pathsgd::norms::path_norm_dp;
use pathsgd::optim::compute_path_scales;
use pathsgd::rescale::init_balanced;
use pathsgd::{Batch, Error, NetworkGraph, OptimizerState, WeightMap};

pub const PATHSGD_OK: i32 = 0;
pub const PATHSGD_ERR_NULL: i32 = 1;
pub const PATHSGD_ERR_INVALID: i32 = 2;
pub const PATHSGD_ERR_SHAPE: i32 = 3;
pub const PATHSGD_ERR_NUMERIC: i32 = 4;
pub const PATHSGD_ERR_GRAPH: i32 = 5;
pub const PATHSGD_ERR_PANIC: i32 = 6;

pub const PATHSGD_OPT_SGD: i32 = 0;
pub const PATHSGD_OPT_ADAGRAD: i32 = 1;
pub const PATHSGD_OPT_PATHSGD: i32 = 2;

/// Network graph handle.
pub struct PsgdGraph {
    inner: NetworkGraph,
}

/// Edge weight handle.
pub struct PsgdWeights {
    inner: WeightMap,
}

/// Optimizer state handle.
pub struct PsgdOptimizer {
    inner: OptimizerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Shape { .. } => PATHSGD_ERR_SHAPE,
        Error::Numeric(_) => PATHSGD_ERR_NUMERIC,
        Error::InvalidArchitecture(_)
        | Error::CyclicGraph(_)
        | Error::RoleViolation(_)
        | Error::DeadUnit(_)
        | Error::MissingEdge(_) => PATHSGD_ERR_GRAPH,
        _ => PATHSGD_ERR_INVALID,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PATHSGD_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            PATHSGD_ERR_PANIC
        }
    }
}

fn lib(e: Error) -> (i32, String) {
    (code_of(&e), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (PATHSGD_ERR_NULL, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (i32, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (i32, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (i32, String)> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(slice::from_raw_parts(p, len))
    }
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (i32, String)> {
    if len == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(slice::from_raw_parts_mut(p, len))
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), (i32, String)> {
    if expected == actual {
        Ok(())
    } else {
        Err(lib(Error::Shape { expected, actual }))
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pathsgd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a fully connected layered graph from `n` layer sizes.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_graph_layered(sizes: *const usize, n: usize, out: *mut *mut PsgdGraph) -> i32 {
    guard(|| {
        let out = as_mut(out, "out")?;
        let sizes = input(sizes, n, "sizes")?;
        let g = NetworkGraph::layered(sizes).map_err(lib)?;
        *out = Box::into_raw(Box::new(PsgdGraph { inner: g }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pathsgd_graph_free(g: *mut PsgdGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of edges, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_graph_num_edges(g: *const PsgdGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.num_edges())
}

#[no_mangle]
pub unsafe extern "C" fn pathsgd_graph_input_dim(g: *const PsgdGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.input_dim())
}

#[no_mangle]
pub unsafe extern "C" fn pathsgd_graph_output_dim(g: *const PsgdGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.output_dim())
}

/// Gaussian weights with variance `1 / fan_in` of the target unit.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_weights_init_balanced(
    g: *const PsgdGraph,
    seed: u64,
    out: *mut *mut PsgdWeights,
) -> i32 {
    guard(|| {
        let g = as_ref(g, "graph")?;
        let out = as_mut(out, "out")?;
        *out = Box::into_raw(Box::new(PsgdWeights {
            inner: init_balanced(&g.inner, seed),
        }));
        Ok(())
    })
}

/// Copies `len` weights, one per edge in graph order.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_weights_from_array(
    g: *const PsgdGraph,
    values: *const f64,
    len: usize,
    out: *mut *mut PsgdWeights,
) -> i32 {
    guard(|| {
        let g = as_ref(g, "graph")?;
        let out = as_mut(out, "out")?;
        let values = input(values, len, "values")?;
        let w = WeightMap::for_graph(&g.inner, values.to_vec()).map_err(lib)?;
        *out = Box::into_raw(Box::new(PsgdWeights { inner: w }));
        Ok(())
    })
}

/// Writes the weights into `dst`, which must hold exactly one value per edge.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_weights_copy_to(w: *const PsgdWeights, dst: *mut f64, len: usize) -> i32 {
    guard(|| {
        let w = as_ref(w, "weights")?;
        check_len(w.inner.len(), len)?;
        output(dst, len, "dst")?.copy_from_slice(w.inner.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pathsgd_weights_free(w: *mut PsgdWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// l_p path regularizer of the weights.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_path_norm(g: *const PsgdGraph, w: *const PsgdWeights, p: f64, out: *mut f64) -> i32 {
    guard(|| {
        let (g, w) = (as_ref(g, "graph")?, as_ref(w, "weights")?);
        let out = as_mut(out, "out")?;
        *out = path_norm_dp(&g.inner, &w.inner, p).map_err(lib)?;
        Ok(())
    })
}

/// Per-edge Path-SGD scales, one per edge.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_path_scales(
    g: *const PsgdGraph,
    w: *const PsgdWeights,
    p: f64,
    dst: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let (g, w) = (as_ref(g, "graph")?, as_ref(w, "weights")?);
        check_len(g.inner.num_edges(), len)?;
        let table = compute_path_scales(&g.inner, &w.inner, p).map_err(lib)?;
        output(dst, len, "dst")?.copy_from_slice(&table.gamma_edge);
        Ok(())
    })
}

/// Output scores for one input vector.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_forward(
    g: *const PsgdGraph,
    w: *const PsgdWeights,
    x: *const f64,
    x_len: usize,
    scores_out: *mut f64,
    scores_len: usize,
) -> i32 {
    guard(|| {
        let (g, w) = (as_ref(g, "graph")?, as_ref(w, "weights")?);
        check_len(g.inner.input_dim(), x_len)?;
        check_len(g.inner.output_dim(), scores_len)?;
        let x = input(x, x_len, "x")?;
        let s = scores(&g.inner, &w.inner, x, 1.0).map_err(lib)?;
        output(scores_out, scores_len, "scores")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Mean truncated cross-entropy over `n` examples (row-major `inputs`) and
/// its gradient, one value per edge.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_backprop(
    g: *const PsgdGraph,
    w: *const PsgdWeights,
    inputs: *const f64,
    labels: *const usize,
    n: usize,
    grad_out: *mut f64,
    grad_len: usize,
    loss_out: *mut f64,
) -> i32 {
    guard(|| {
        let (g, w) = (as_ref(g, "graph")?, as_ref(w, "weights")?);
        check_len(g.inner.num_edges(), grad_len)?;
        let d = g.inner.input_dim();
        let x = input(inputs, n * d, "inputs")?;
        let y = input(labels, n, "labels")?;
        let batch = Batch::new(x.to_vec(), y.to_vec(), d).map_err(lib)?;
        let (grad, loss) = backprop(&g.inner, &w.inner, &batch).map_err(lib)?;
        output(grad_out, grad_len, "grad")?.copy_from_slice(grad.as_slice());
        if !loss_out.is_null() {
            *loss_out = loss;
        }
        Ok(())
    })
}

/// Creates an optimizer. `kind` is one of the `PATHSGD_OPT_*` constants;
/// `momentum` is used by SGD and `p` by Path-SGD.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_optimizer_new(
    g: *const PsgdGraph,
    kind: i32,
    step_size: f64,
    momentum: f64,
    p: f64,
    out: *mut *mut PsgdOptimizer,
) -> i32 {
    guard(|| {
        let g = as_ref(g, "graph")?;
        let out = as_mut(out, "out")?;
        let m = g.inner.num_edges();
        let state = match kind {
            PATHSGD_OPT_SGD => OptimizerState::sgd(m, step_size, momentum),
            PATHSGD_OPT_ADAGRAD => OptimizerState::adagrad(m, step_size),
            PATHSGD_OPT_PATHSGD => OptimizerState::path_sgd(step_size, p),
            other => return Err((PATHSGD_ERR_INVALID, format!("unknown optimizer kind {other}"))),
        }
        .map_err(lib)?;
        *out = Box::into_raw(Box::new(PsgdOptimizer { inner: state }));
        Ok(())
    })
}

/// One update of `w` in place from a gradient with one value per edge.
#[no_mangle]
pub unsafe extern "C" fn pathsgd_optimizer_step(
    opt: *mut PsgdOptimizer,
    g: *const PsgdGraph,
    w: *mut PsgdWeights,
    grad: *const f64,
    len: usize,
) -> i32 {
    guard(|| {
        let opt = as_mut(opt, "optimizer")?;
        let g = as_ref(g, "graph")?;
        let w = as_mut(w, "weights")?;
        check_len(g.inner.num_edges(), len)?;
        let grad = WeightMap::new(input(grad, len, "grad")?.to_vec());
        opt.inner.step(&g.inner, &mut w.inner, &grad).map_err(lib)
    })
}

#[no_mangle]
pub unsafe extern "C" fn pathsgd_optimizer_free(opt: *mut PsgdOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}
