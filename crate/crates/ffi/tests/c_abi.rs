use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pathsgd_ffi::*;

struct Net {
    g: *mut PsgdGraph,
    w: *mut PsgdWeights,
}

impl Net {
    fn new(sizes: &[usize], seed: u64) -> Self {
        let mut g = ptr::null_mut();
        let mut w = ptr::null_mut();
        unsafe {
            assert_eq!(pathsgd_graph_layered(sizes.as_ptr(), sizes.len(), &mut g), PATHSGD_OK);
            assert_eq!(pathsgd_weights_init_balanced(g, seed, &mut w), PATHSGD_OK);
        }
        Self { g, w }
    }

    fn weights(&self) -> Vec<f64> {
        let n = unsafe { pathsgd_graph_num_edges(self.g) };
        let mut v = vec![0.0; n];
        assert_eq!(unsafe { pathsgd_weights_copy_to(self.w, v.as_mut_ptr(), n) }, PATHSGD_OK);
        v
    }
}

impl Drop for Net {
    fn drop(&mut self) {
        unsafe {
            pathsgd_weights_free(self.w);
            pathsgd_graph_free(self.g);
        }
    }
}

fn last_error() -> String {
    let p = pathsgd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn graph_dimensions() {
    let net = Net::new(&[3, 4, 2], 1);
    unsafe {
        assert_eq!(pathsgd_graph_num_edges(net.g), 3 * 4 + 4 * 2);
        assert_eq!(pathsgd_graph_input_dim(net.g), 3);
        assert_eq!(pathsgd_graph_output_dim(net.g), 2);
        assert_eq!(pathsgd_graph_num_edges(ptr::null()), 0);
    }
}

#[test]
fn path_norm_and_scales_by_hand() {
    let sizes = [2usize, 1, 1];
    let mut g = ptr::null_mut();
    let mut w = ptr::null_mut();
    let values = [2.0, 3.0, 4.0];
    unsafe {
        assert_eq!(pathsgd_graph_layered(sizes.as_ptr(), 3, &mut g), PATHSGD_OK);
        assert_eq!(pathsgd_weights_from_array(g, values.as_ptr(), 3, &mut w), PATHSGD_OK);
        let mut phi = 0.0;
        assert_eq!(pathsgd_path_norm(g, w, 2.0, &mut phi), PATHSGD_OK);
        assert!((phi - 208f64.sqrt()).abs() < 1e-12);
        let mut gamma = [0.0; 3];
        assert_eq!(pathsgd_path_scales(g, w, 2.0, gamma.as_mut_ptr(), 3), PATHSGD_OK);
        assert_eq!(gamma, [16.0, 16.0, 13.0]);
        pathsgd_weights_free(w);
        pathsgd_graph_free(g);
    }
}

#[test]
fn forward_backprop_and_step() {
    let net = Net::new(&[3, 5, 2], 7);
    let n_edges = unsafe { pathsgd_graph_num_edges(net.g) };
    let x = [0.2, 0.9, 0.4, 0.7, 0.1, 0.5];
    let labels = [1usize, 0];
    let mut scores = [0.0; 2];
    let mut grad = vec![0.0; n_edges];
    let mut loss = 0.0;
    unsafe {
        assert_eq!(pathsgd_forward(net.g, net.w, x.as_ptr(), 3, scores.as_mut_ptr(), 2), PATHSGD_OK);
        assert!(scores.iter().all(|s| s.is_finite()));
        assert_eq!(
            pathsgd_backprop(net.g, net.w, x.as_ptr(), labels.as_ptr(), 2, grad.as_mut_ptr(), n_edges, &mut loss),
            PATHSGD_OK
        );
    }
    assert!(loss > 0.0);
    let before = net.weights();
    for kind in [PATHSGD_OPT_SGD, PATHSGD_OPT_ADAGRAD, PATHSGD_OPT_PATHSGD] {
        let mut opt = ptr::null_mut();
        unsafe {
            assert_eq!(pathsgd_optimizer_new(net.g, kind, 0.01, 0.5, 2.0, &mut opt), PATHSGD_OK);
            assert_eq!(pathsgd_optimizer_step(opt, net.g, net.w, grad.as_ptr(), n_edges), PATHSGD_OK);
            pathsgd_optimizer_free(opt);
        }
    }
    assert_ne!(net.weights(), before);
}

#[test]
fn sgd_step_matches_formula() {
    let net = Net::new(&[2, 2], 3);
    let w0 = net.weights();
    let grad = [1.0, -2.0, 0.5, 0.0];
    let mut opt = ptr::null_mut();
    unsafe {
        assert_eq!(pathsgd_optimizer_new(net.g, PATHSGD_OPT_SGD, 0.1, 0.0, 2.0, &mut opt), PATHSGD_OK);
        assert_eq!(pathsgd_optimizer_step(opt, net.g, net.w, grad.as_ptr(), 4), PATHSGD_OK);
        pathsgd_optimizer_free(opt);
    }
    for ((a, b), g) in net.weights().iter().zip(&w0).zip(&grad) {
        assert!((a - (b - 0.1 * g)).abs() < 1e-15);
    }
}

#[test]
fn errors_are_reported() {
    let net = Net::new(&[3, 2], 1);
    let mut scores = [0.0; 2];
    let x = [0.0; 2];
    unsafe {
        assert_eq!(pathsgd_forward(net.g, net.w, x.as_ptr(), 2, scores.as_mut_ptr(), 2), PATHSGD_ERR_SHAPE);
        assert!(last_error().contains("expected 3"));
        let mut phi = 0.0;
        assert_eq!(pathsgd_path_norm(ptr::null(), net.w, 2.0, &mut phi), PATHSGD_ERR_NULL);
        assert_eq!(pathsgd_path_norm(net.g, net.w, 0.5, &mut phi), PATHSGD_ERR_INVALID);
        let mut g = ptr::null_mut();
        let bad = [3usize, 0, 2];
        assert_eq!(pathsgd_graph_layered(bad.as_ptr(), 3, &mut g), PATHSGD_ERR_GRAPH);
        assert!(g.is_null());
        let mut opt = ptr::null_mut();
        assert_eq!(pathsgd_optimizer_new(net.g, 9, 0.1, 0.0, 2.0, &mut opt), PATHSGD_ERR_INVALID);
        assert_eq!(pathsgd_optimizer_new(net.g, PATHSGD_OPT_SGD, -1.0, 0.0, 2.0, &mut opt), PATHSGD_ERR_INVALID);
        pathsgd_graph_free(ptr::null_mut());
        pathsgd_weights_free(ptr::null_mut());
        pathsgd_optimizer_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include").join("pathsgd.h");
    assert!(header.is_file(), "build script should write {}", header.display());
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["pathsgd_graph_layered", "pathsgd_path_scales", "pathsgd_optimizer_step", "typedef struct PsgdGraph PsgdGraph"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping compile check");
        return;
    };
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("abi_check.c");
    std::fs::write(
        &src,
        "#include \"pathsgd.h\"\n\
         int check(void) {\n\
           size_t sizes[3] = {4, 3, 2};\n\
           PsgdGraph *g = NULL; PsgdWeights *w = NULL; PsgdOptimizer *o = NULL;\n\
           double phi = 0.0;\n\
           if (pathsgd_graph_layered(sizes, 3, &g) != PATHSGD_OK) return 1;\n\
           pathsgd_weights_init_balanced(g, 1, &w);\n\
           pathsgd_path_norm(g, w, 2.0, &phi);\n\
           pathsgd_optimizer_new(g, PATHSGD_OPT_PATHSGD, 0.1, 0.0, 2.0, &o);\n\
           pathsgd_optimizer_free(o); pathsgd_weights_free(w); pathsgd_graph_free(g);\n\
           return pathsgd_last_error() == NULL ? 0 : 2;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
