use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathsgd::cli::verify::{case_seed, check_path_scales, check_path_scales_with, random_case, VerifyOptions};
use pathsgd::cli::{ExperimentConfig, MetricsLog};
use pathsgd::optim::{compute_path_scales, PathScaleTable};
use pathsgd::{NetworkGraph, Result, WeightMap};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathsgd"));
    c.env_remove("PATHSGD_DATA_DIR");
    c
}

/// Writes a small two-prototype digit set in the MNIST file layout.
fn synthetic_mnist(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let side = 8;
    let mut write = |prefix: &str, n: usize| {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 3) as u8;
            for r in 0..side {
                for c in 0..side {
                    let on = match label {
                        0 => r < side / 2,
                        1 => c < side / 2,
                        _ => (r + c) % 2 == 0,
                    };
                    let base: f64 = if on { 200.0 } else { 30.0 };
                    pixels.push((base + rng.random_range(-25.0..25.0)).clamp(0.0, 255.0) as u8);
                }
            }
            labels.push(label);
        }
        pathsgd::data::write_idx(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            &pixels,
            &labels,
            side,
            side,
        )
        .unwrap();
    };
    write("train", 300);
    write("t10k", 100);
}

fn run(args: &[&str], data: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--data-dir")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(["--train-count", "200", "--validation-count", "50", "--test-count", "50"])
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    synthetic_mnist(&data);
    (dir, data)
}

#[test]
fn train_writes_config_metrics_and_timing() {
    let (dir, data) = setup();
    let out = dir.path().join("run");
    let o = run(&["train", "--optimizer", "pathsgd", "--alpha", "2", "--epochs", "3", "--hidden", "16"], &data, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(config.epochs, 3);
    assert_eq!(config.hidden, vec![16]);
    assert_eq!(config.alpha, Some(2));
    let log = MetricsLog::read_csv(&out.join("metrics.csv")).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(log.to_csv().unwrap(), fs::read_to_string(out.join("metrics.csv")).unwrap());
    let timing = fs::read_to_string(out.join("metrics.timing.csv")).unwrap();
    assert!(timing.starts_with("epoch,wall_seconds"));
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, data) = setup();
    let args = ["compare-optimizers", "--alpha-grid", "1,2", "--epochs", "2", "--hidden", "8,8", "--dropout", "0.5"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&args, &data, &a).status.success());
    assert!(run(&args, &data, &b).status.success());
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") && !n.contains("timing"))
        .collect();
    names.sort();
    assert!(names.len() >= 5, "{names:?}");
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n} differs");
    }
    assert_eq!(
        fs::read(a.join("grid/sgd-alpha1.csv")).unwrap(),
        fs::read(b.join("grid/sgd-alpha1.csv")).unwrap()
    );
}

#[test]
fn data_dir_from_environment() {
    let (dir, data) = setup();
    let out = dir.path().join("env");
    let o = bin()
        .env("PATHSGD_DATA_DIR", &data)
        .args(["train", "--alpha", "2", "--epochs", "1", "--hidden", "4", "--out"])
        .arg(&out)
        .args(["--train-count", "100", "--validation-count", "0", "--test-count", "0"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(config.data_dir, data);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["train", "--alpha", "1"], &dir.path().join("nothing"), &dir.path().join("o"));
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));
    let bad_alpha = bin().args(["train", "--alpha", "11"]).output().unwrap();
    assert_ne!(bad_alpha.status.code(), Some(0));
    let ok = bin().args(["verify", "--dags", "20", "--nets", "2"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("all checks passed"));
}

#[test]
fn balance_study_with_no_rescaled_units_is_trivial() {
    let (dir, data) = setup();
    let out = dir.path().join("bal");
    let o = run(
        &["balance-study", "--alpha", "1", "--epochs", "2", "--hidden", "8", "--unbalanced-units", "0"],
        &data,
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for kind in ["sgd", "pathsgd"] {
        assert_eq!(
            fs::read(out.join(format!("{kind}-balanced.csv"))).unwrap(),
            fs::read(out.join(format!("{kind}-unbalanced.csv"))).unwrap()
        );
    }
}

#[test]
fn dropout_raises_early_train_error() {
    let (dir, data) = setup();
    let common = ["train", "--optimizer", "sgd", "--alpha", "1", "--epochs", "1", "--hidden", "32"];
    let plain = dir.path().join("plain");
    let drop = dir.path().join("drop");
    assert!(run(&common, &data, &plain).status.success());
    let mut with = common.to_vec();
    with.extend(["--dropout", "0.5"]);
    assert!(run(&with, &data, &drop).status.success());
    let a = MetricsLog::read_csv(&plain.join("metrics.csv")).unwrap();
    let b = MetricsLog::read_csv(&drop.join("metrics.csv")).unwrap();
    let (ea, eb) = (a.rows()[1].train_error, b.rows()[1].train_error);
    assert!(eb > ea, "dropout {eb} vs plain {ea}");
}

/// Path scales computed with the exponent `1/p` instead of `2/p`.
fn wrong_exponent(g: &NetworkGraph, w: &WeightMap, p: f64) -> Result<PathScaleTable> {
    let mut t = compute_path_scales(g, w, p)?;
    for (e, edge) in g.edges().iter().enumerate() {
        t.gamma_edge[e] = (t.gamma_in[edge.source] * t.gamma_out[edge.target]).powf(1.0 / p);
    }
    Ok(t)
}

#[test]
fn injected_exponent_bug_is_caught_and_replayable() {
    let opts = VerifyOptions::default();
    assert!(check_path_scales(&opts).passed);
    let bad = check_path_scales_with(&opts, &wrong_exponent);
    assert!(!bad.passed);
    let cx = bad.counterexample.clone().unwrap();
    assert!(cx.contains("case_seed=") && cx.contains("edges=[") && cx.contains("weights="), "{cx}");
    let seed: u64 = cx
        .split_whitespace()
        .find_map(|t| t.strip_prefix("case_seed="))
        .unwrap()
        .parse()
        .unwrap();
    let first_bad = (0..opts.dags).map(|i| case_seed(opts.seed, 1, i)).find(|&s| s == seed);
    assert!(first_bad.is_some());
    let (g, w, p) = random_case(seed);
    let good = compute_path_scales(&g, &w, p).unwrap();
    let wrong = wrong_exponent(&g, &w, p).unwrap();
    assert!(good.gamma_edge.iter().zip(&wrong.gamma_edge).any(|(a, b)| (a - b).abs() > 1e-10 * a.abs()));
}
