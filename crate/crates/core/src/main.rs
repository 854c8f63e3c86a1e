use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathsgd::cli::studies::BALANCE_AGREEMENT_TOL;
use pathsgd::cli::{
    prepare_data, run_balance_study, run_optimizer_compare, run_train, run_verify, run_width_sweep, DatasetKind,
    ExperimentConfig, ExperimentKind, SelectionRule, VerifyOptions, DATA_DIR_ENV,
};
use pathsgd::{ArchSpec, OptimizerKind};

#[derive(Parser)]
#[command(name = "pathsgd", version, about = "Path-normalized training of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and record its learning curve.
    Train(ExperimentArgs),
    /// Train [input, H, classes] nets over a list of widths H.
    SweepWidth(ExperimentArgs),
    /// Compare training from balanced and rescaled initializations.
    BalanceStudy(ExperimentArgs),
    /// Grid-search step sizes and compare SGD, AdaGrad and Path-SGD.
    CompareOptimizers(ExperimentArgs),
    /// Run the oracle and invariance checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config to start from; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layer sizes such as `100,256,10`, or a JSON architecture file.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetKind>,
    /// Directory with the dataset files (overrides the environment).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// One or more of sgd, adagrad, pathsgd.
    #[arg(long, value_delimiter = ',', value_parser = parse_optimizer)]
    optimizer: Vec<OptimizerKind>,
    /// Step size 10^-alpha. Without it, studies that allow it grid-search.
    #[arg(long, value_parser = clap::value_parser!(u32).range(0..=10))]
    alpha: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Vec<u32>,
    #[arg(long, value_parser = parse_selection)]
    selection: Option<SelectionRule>,
    #[arg(long)]
    p: Option<f64>,
    /// Retain probability of hidden units; enables dropout.
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    validation_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Resize images to this side length (grayscale first).
    #[arg(long)]
    downsample: Option<usize>,
    /// Hidden layer sizes when --arch is not given.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    widths: Vec<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Decay the step size and raise the momentum after every epoch.
    #[arg(long)]
    schedule: Option<bool>,
    #[arg(long)]
    unbalanced_units: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = VerifyOptions::default().dags)]
    dags: usize,
    #[arg(long, default_value_t = VerifyOptions::default().nets)]
    nets: usize,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: pathsgd::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: pathsgd::Error| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionRule, String> {
    match s {
        "best-final" => Ok(SelectionRule::BestFinal),
        "fastest" => Ok(SelectionRule::Fastest),
        _ => Err(format!("unknown selection rule {s:?} (best-final, fastest)")),
    }
}

impl ExperimentArgs {
    fn resolve(self, kind: ExperimentKind) -> pathsgd::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let mut c = ExperimentConfig::load(path)?;
                c.experiment = kind;
                c
            }
            None => ExperimentConfig::new(kind),
        };
        c.apply_env();
        if let Some(a) = &self.arch {
            c.arch = Some(ArchSpec::parse(a)?);
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { c.$field = v; }
            )*};
        }
        set!(dataset, data_dir, selection, p, epochs, seed, out, train_count, validation_count, test_count, batch_size, momentum, schedule, unbalanced_units);
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        if self.dropout.is_some() {
            c.dropout = self.dropout;
        }
        if self.downsample.is_some() {
            c.downsample = self.downsample;
        }
        if !self.optimizer.is_empty() {
            c.optimizers = self.optimizer;
        }
        if !self.alpha_grid.is_empty() {
            c.alpha_grid = self.alpha_grid;
            if self.alpha.is_none() {
                c.alpha = None;
            }
        }
        if !self.hidden.is_empty() {
            c.hidden = self.hidden;
        }
        if !self.widths.is_empty() {
            c.widths = self.widths;
        }
        c.validate()?;
        Ok(c)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn experiment(kind: ExperimentKind, args: ExperimentArgs) -> pathsgd::Result<bool> {
    let config = args.resolve(kind)?;
    let data = prepare_data(&config)?;
    let out = config.out.display();
    match kind {
        ExperimentKind::Train => {
            let run = run_train(&config, &data)?;
            if let Some(r) = run.log.last() {
                println!(
                    "epoch {} objective {:.6} train_err {:.4} val_err {} test_err {}",
                    r.epoch,
                    r.objective,
                    r.train_error,
                    fmt_opt(r.validation_error),
                    fmt_opt(r.test_error)
                );
            }
            println!("metrics written to {out}");
            Ok(!run.diverged)
        }
        ExperimentKind::WidthSweep => {
            let rep = run_width_sweep(&config, &data)?;
            println!("{:>6} {:>7} {:>10} {:>10} {:>10} {:>12}", "H", "epochs", "train_err", "test_err", "es_test", "status");
            for c in &rep.cells {
                let status = if c.diverged { "diverged" } else if c.converged { "converged" } else { "epoch cap" };
                println!(
                    "{:>6} {:>7} {:>10} {:>10} {:>10} {:>12}",
                    c.width,
                    c.epochs_run,
                    fmt_opt(c.final_train_error),
                    fmt_opt(c.final_test_error),
                    fmt_opt(c.early_stop_test_error),
                    status
                );
            }
            match rep.interpolation_width() {
                Some(c) => println!("interpolation width: {}", c.width),
                None => println!("no width reached zero training error"),
            }
            println!("results written to {out}");
            Ok(true)
        }
        ExperimentKind::BalanceStudy => {
            let rep = run_balance_study(&config, &data)?;
            for r in &rep.rows {
                println!(
                    "{:<8} balanced {} unbalanced {} ratio {} max_rel_diff {:.3e}",
                    r.optimizer.to_string(),
                    fmt_opt(r.balanced_final_objective),
                    fmt_opt(r.unbalanced_final_objective),
                    fmt_opt(r.objective_ratio),
                    r.max_relative_difference
                );
            }
            let bad = rep.path_sgd_disagreements();
            if !bad.is_empty() {
                eprintln!("Path-SGD curves differ by more than {BALANCE_AGREEMENT_TOL:e}");
            }
            println!("results written to {out}");
            Ok(bad.is_empty())
        }
        ExperimentKind::OptimizerCompare => {
            let rep = run_optimizer_compare(&config, &data)?;
            for r in &rep.rows {
                println!(
                    "{:<8} alpha {:>2} epochs_to_{} {:>5} objective {:.5} train_err {:.4} test_err {}",
                    r.optimizer.to_string(),
                    r.alpha,
                    r.objective_threshold,
                    r.epochs_to_threshold.map_or_else(|| "-".into(), |e| e.to_string()),
                    r.final_objective,
                    r.final_train_error,
                    fmt_opt(r.final_test_error)
                );
            }
            println!("results written to {out}");
            Ok(true)
        }
        ExperimentKind::Verify => unreachable!("verify has its own handler"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Verify(v) => {
            let opts = VerifyOptions {
                seed: v.seed,
                dags: v.dags,
                nets: v.nets,
                ..VerifyOptions::default()
            };
            let report = run_verify(&opts);
            print!("{}", report.render());
            return if report.passed() {
                println!("all checks passed");
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed; rerun with --seed {} to reproduce", opts.seed);
                ExitCode::from(2)
            };
        }
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::SweepWidth(a) => (ExperimentKind::WidthSweep, a),
        Command::BalanceStudy(a) => (ExperimentKind::BalanceStudy, a),
        Command::CompareOptimizers(a) => (ExperimentKind::OptimizerCompare, a),
    };
    match experiment(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, pathsgd::Error::Config(_)) && std::env::var_os(DATA_DIR_ENV).is_none() {
                eprintln!("hint: the data directory can also be set with {DATA_DIR_ENV}");
            }
            ExitCode::from(1)
        }
    }
}
