//! Subcommands of the `dsl` tool.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dsl_core::learner::{
    self, evaluate, fit_model, two_moons, DatasetSplit, DslModel, EpochRecord, FitResult,
    SolverOptions,
};
use dsl_core::slcore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{load_config, Precision, RunConfig};
use crate::dataset::{load_csv, to_csv, RawDataset};
use crate::error::{CliError, CliResult, ExitKind};
use crate::{selfcheck, write_atomic};

#[derive(Debug, Parser)]
#[command(
    name = "dsl",
    version,
    about = "Sturm-Liouville basis function classifiers"
)]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Globals {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Tolerance preset; overrides the configured solver tolerances.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus its epoch history.
    Train(TrainArgs),
    /// Accuracy and mean loss of a checkpoint on a labeled CSV.
    Eval(EvalArgs),
    /// Per-row class predictions and logits.
    Predict(PredictArgs),
    /// Eigenfunctions of one sample on a uniform grid of its interval.
    Basis(BasisArgs),
    /// Test accuracy against training set size, with optional d and alpha sweeps.
    BenchSampleEfficiency(BenchArgs),
    /// Analytic, bound, orthogonality and gradient checks of the solver.
    Selfcheck(SelfcheckArgs),
    /// Write a two-moons dataset.
    GenMoons(GenMoonsArgs),
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint path; the history goes to `<out>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct BasisArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Zero-based row of the data file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    /// Base configuration (default: built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled CSV pool to draw splits from (default: two moons).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 400, 800])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    /// Size of the validation and of the test split.
    #[arg(long, default_value_t = 1000)]
    pub eval_size: usize,
    /// Two-moons noise level.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Repeat for every basis size d in 2..=20.
    #[arg(long)]
    pub sweep_d: bool,
    /// Repeat for alpha in {0, 1e-4, 1e-3, ..., 10}.
    #[arg(long)]
    pub sweep_alpha: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SelfcheckArgs {
    /// Skip the finite-difference gradient suite.
    #[arg(long)]
    pub skip_gradients: bool,
}

#[derive(Clone, Debug, Args)]
pub struct GenMoonsArgs {
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.globals;
    match &cli.command {
        Command::Train(a) => train(a, g).map(|_| ()),
        Command::Eval(a) => eval(a, g),
        Command::Predict(a) => predict(a, g),
        Command::Basis(a) => basis(a, g),
        Command::BenchSampleEfficiency(a) => bench_sample_efficiency(a, g),
        Command::Selfcheck(a) => run_selfcheck(a),
        Command::GenMoons(a) => gen_moons(a, g),
    }
}

/// `<checkpoint>.history.csv`
pub fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_accuracy,skipped\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_accuracy, r.skipped
        ));
    }
    s
}

fn apply_globals(cfg: &mut RunConfig, g: &Globals) {
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(p) = g.precision {
        p.apply(&mut cfg.train);
    }
}

fn solver_options(ck: &Checkpoint, g: &Globals) -> SolverOptions {
    let mut train = ck.config.train.clone();
    if let Some(p) = g.precision {
        p.apply(&mut train);
    }
    train.solver_options()
}

fn labeled(raw: &RawDataset, path: &Path, label_column: &str) -> CliResult<Vec<usize>> {
    raw.require_labels(label_column)
        .map(<[usize]>::to_vec)
        .map_err(|e| CliError::io(path, e.message))
}

fn normalized(ck: &Checkpoint, raw: &RawDataset, path: &Path) -> CliResult<Vec<Vec<f64>>> {
    if raw.feature_names.len() != ck.model.n {
        return Err(CliError::io(
            path,
            format!(
                "expected {} feature columns, found {}",
                ck.model.n,
                raw.feature_names.len()
            ),
        ));
    }
    Ok(learner::normalize(&raw.features, Some(&ck.normalization))?.0)
}

pub fn train(args: &TrainArgs, g: &Globals) -> CliResult<FitResult> {
    let mut cfg = load_config(&args.config)?;
    apply_globals(&mut cfg, g);
    cfg.validate()?;
    let label = cfg.data.label_column.clone();
    let train_raw = load_csv(&args.train, &label)?;
    let val_raw = load_csv(&args.val, &label)?;
    let train_y = labeled(&train_raw, &args.train, &label)?;
    let val_y = labeled(&val_raw, &args.val, &label)?;
    if train_raw.feature_names != val_raw.feature_names {
        return Err(CliError::io(
            &args.val,
            "feature columns differ from the training file",
        ));
    }
    let train_split = DatasetSplit::from_raw(&train_raw.features, train_y, None)?;
    let val_split =
        DatasetSplit::from_raw(&val_raw.features, val_y, Some(&train_split.normalization))?;
    let k = train_split
        .labels
        .iter()
        .chain(&val_split.labels)
        .max()
        .copied()
        .unwrap_or(0)
        + 1;
    let model = DslModel::new(train_split.dim(), k.max(2), &cfg.model, cfg.train.seed)?;
    let quiet = args.quiet;
    let epochs = cfg.train.epochs;
    let result = fit_model(&cfg.train, model, &train_split, &val_split, |r| {
        if !quiet {
            eprintln!(
                "epoch {}/{epochs}: train loss {:.6} val accuracy {:.4} skipped {}",
                r.epoch, r.train_loss, r.val_accuracy, r.skipped
            );
        }
    })?;
    let ck = Checkpoint {
        model: result.model.clone(),
        config: cfg,
        normalization: train_split.normalization.clone(),
        feature_names: train_raw.feature_names.clone(),
    };
    checkpoint::save(&args.out, &ck)?;
    let hist = history_path(&args.out);
    write_atomic(&hist, history_csv(&result.history).as_bytes())?;
    if !quiet {
        eprintln!(
            "best epoch {} (val accuracy {:.4}); wrote {} and {}",
            result.best_epoch,
            result.history[result.best_epoch - 1].val_accuracy,
            args.out.display(),
            hist.display()
        );
    }
    Ok(result)
}

pub fn eval(args: &EvalArgs, g: &Globals) -> CliResult<()> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let label = &ck.config.data.label_column;
    let raw = load_csv(&args.data, label)?;
    let labels = labeled(&raw, &args.data, label)?;
    let split = DatasetSplit {
        features: normalized(&ck, &raw, &args.data)?,
        labels,
        normalization: ck.normalization.clone(),
    };
    if let Some(&bad) = split.labels.iter().find(|&&y| y >= ck.model.k) {
        return Err(CliError::io(
            &args.data,
            format!("label {bad} outside the {} model classes", ck.model.k),
        ));
    }
    let e = evaluate(
        &ck.model,
        &split,
        ck.config.train.loss,
        &solver_options(&ck, g),
    )?;
    println!("samples {}", split.len());
    println!("accuracy {}", e.accuracy);
    println!("mean_loss {}", e.mean_loss);
    println!("failures {}", e.failures);
    Ok(())
}

pub fn predict(args: &PredictArgs, g: &Globals) -> CliResult<()> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let raw = load_csv(&args.data, &ck.config.data.label_column)?;
    let features = normalized(&ck, &raw, &args.data)?;
    let opts = solver_options(&ck, g);
    let logits: Vec<Option<Vec<f64>>> = features
        .par_iter()
        .map(|x| ck.model.predict(x, &opts).ok())
        .collect();
    let mut out = String::from("index,class");
    for c in 0..ck.model.k {
        out.push_str(&format!(",logit_{c}"));
    }
    out.push('\n');
    let mut failures = 0;
    for (i, z) in logits.iter().enumerate() {
        match z {
            Some(z) => {
                out.push_str(&format!("{i},{}", learner::argmax(z)));
                for v in z {
                    out.push_str(&format!(",{v}"));
                }
            }
            None => {
                failures += 1;
                out.push_str(&format!("{i},"));
                out.push_str(&",".repeat(ck.model.k));
            }
        }
        out.push('\n');
    }
    if failures > 0 {
        eprintln!("warning: forward pass failed on {failures} rows; their fields are empty");
    }
    match &args.out {
        Some(p) => write_atomic(p, out.as_bytes()),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| CliError::new(ExitKind::Io, e.to_string())),
    }
}

pub fn basis(args: &BasisArgs, g: &Globals) -> CliResult<()> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let raw = load_csv(&args.data, &ck.config.data.label_column)?;
    if args.index >= raw.len() {
        return Err(CliError::config(format!(
            "sample index {} out of range for {} rows",
            args.index,
            raw.len()
        )));
    }
    if args.grid < 2 {
        return Err(CliError::config("grid needs at least 2 points"));
    }
    let features = normalized(&ck, &raw, &args.data)?;
    let opts = solver_options(&ck, g);
    let numerical = |e: dsl_core::DslError| {
        CliError::new(
            ExitKind::Numerical,
            format!("forward pass failed on sample {}: {e}", args.index),
        )
    };
    let cache = ck
        .model
        .forward(&features[args.index], &opts)
        .map_err(numerical)?;
    let b = slcore::eval_basis_with(
        &cache.trace,
        &cache.spectrum,
        args.grid,
        opts.shooting.substeps,
    )
    .map_err(numerical)?;
    let mut out = String::from("t");
    for i in 1..=ck.model.d {
        out.push_str(&format!(",u{i}"));
    }
    out.push('\n');
    for (j, t) in b.times.iter().enumerate() {
        out.push_str(&t.to_string());
        for i in 0..ck.model.d {
            out.push_str(&format!(",{}", b.u[(i, j)]));
        }
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes())
}

pub const ALPHA_GRID: [f64; 7] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// One bench run: train on `size` samples, select on val, score on test.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub d: usize,
    pub alpha: f64,
    pub size: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

fn bench_pool(
    args: &BenchArgs,
    label: &str,
    size: usize,
    seed: u64,
) -> CliResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let need = size + 2 * args.eval_size;
    match &args.data {
        None => Ok(two_moons(need + need % 2, args.noise, seed)?),
        Some(p) => {
            let raw = load_csv(p, label)?;
            let y = labeled(&raw, p, label)?;
            if raw.len() < need {
                return Err(CliError::io(
                    p,
                    format!("pool has {} rows, {need} needed", raw.len()),
                ));
            }
            let mut idx: Vec<usize> = (0..raw.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            Ok(idx.iter().map(|&i| (raw.features[i].clone(), y[i])).unzip())
        }
    }
}

pub fn bench_sample_efficiency(args: &BenchArgs, g: &Globals) -> CliResult<()> {
    let mut base = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    apply_globals(&mut base, g);
    base.train.epochs = args.epochs;
    base.train.alpha = args.alpha;
    base.validate()?;
    if args.sizes.is_empty() || args.sizes.contains(&0) || args.eval_size == 0 || args.seeds == 0 {
        return Err(CliError::config(
            "sizes, seeds and eval size must be positive",
        ));
    }
    let ds: Vec<usize> = if args.sweep_d {
        (2..=20).collect()
    } else {
        vec![base.model.d]
    };
    let alphas: Vec<f64> = if args.sweep_alpha {
        ALPHA_GRID.to_vec()
    } else {
        vec![args.alpha]
    };
    let mut rows = Vec::new();
    for &d in &ds {
        for &alpha in &alphas {
            for &size in &args.sizes {
                for s in 0..args.seeds {
                    let seed = base.train.seed.wrapping_add(s);
                    let mut cfg = base.clone();
                    cfg.model.d = d;
                    cfg.train.alpha = alpha;
                    cfg.train.seed = seed;
                    let (x, y) = bench_pool(args, &cfg.data.label_column, size, seed)?;
                    let (tr, rest) = (0..size, size..size + args.eval_size);
                    let te = size + args.eval_size..size + 2 * args.eval_size;
                    let train = DatasetSplit::from_raw(&x[tr.clone()], y[tr].to_vec(), None)?;
                    let val = DatasetSplit::from_raw(
                        &x[rest.clone()],
                        y[rest].to_vec(),
                        Some(&train.normalization),
                    )?;
                    let test = DatasetSplit::from_raw(
                        &x[te.clone()],
                        y[te].to_vec(),
                        Some(&train.normalization),
                    )?;
                    let k = y.iter().max().copied().unwrap_or(0) + 1;
                    let model = DslModel::new(train.dim(), k.max(2), &cfg.model, seed)?;
                    let fit = fit_model(&cfg.train, model, &train, &val, |_| {})?;
                    let opts = cfg.train.solver_options();
                    let t = evaluate(&fit.model, &test, cfg.train.loss, &opts)?;
                    let row = BenchRow {
                        d,
                        alpha,
                        size,
                        seed,
                        best_epoch: fit.best_epoch,
                        val_accuracy: fit.history[fit.best_epoch - 1].val_accuracy,
                        test_accuracy: t.accuracy,
                    };
                    eprintln!(
                        "d {d} alpha {alpha} size {size} seed {seed}: test accuracy {:.4}",
                        row.test_accuracy
                    );
                    rows.push(row);
                }
            }
        }
    }
    let mut out = String::from("d,alpha,size,seed,best_epoch,val_accuracy,test_accuracy\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.d, r.alpha, r.size, r.seed, r.best_epoch, r.val_accuracy, r.test_accuracy
        ));
    }
    write_atomic(&args.out, out.as_bytes())
}

fn run_selfcheck(args: &SelfcheckArgs) -> CliResult<()> {
    let reports = selfcheck::run_all(!args.skip_gradients);
    let mut failed = 0;
    for r in &reports {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.detail
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::new(
            ExitKind::Numerical,
            format!("{failed} self-check suite(s) failed"),
        ));
    }
    Ok(())
}

pub fn gen_moons(args: &GenMoonsArgs, g: &Globals) -> CliResult<()> {
    let (x, y) = two_moons(args.samples, args.noise, g.seed.unwrap_or(0))
        .map_err(|e| CliError::config(e.to_string()))?;
    let names = vec!["x1".to_string(), "x2".to_string()];
    write_atomic(&args.out, &to_csv(&names, "label", &x, &y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_global_flags_anywhere() {
        let cli = Cli::try_parse_from([
            "dsl",
            "--seed",
            "3",
            "train",
            "--config",
            "c.toml",
            "--train",
            "a.csv",
            "--val",
            "b.csv",
            "--out",
            "m.ckpt",
            "--precision",
            "high",
        ])
        .unwrap();
        assert_eq!(cli.globals.seed, Some(3));
        assert_eq!(cli.globals.precision, Some(Precision::High));
        assert!(matches!(cli.command, Command::Train(_)));
        let cli = Cli::try_parse_from([
            "dsl",
            "bench-sample-efficiency",
            "--sizes",
            "10,20",
            "--out",
            "r.csv",
        ])
        .unwrap();
        match cli.command {
            Command::BenchSampleEfficiency(b) => assert_eq!(b.sizes, vec![10, 20]),
            _ => panic!(),
        }
    }

    #[test]
    fn history_layout() {
        let h = [EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_accuracy: 0.75,
            skipped: 2,
        }];
        assert_eq!(
            history_csv(&h),
            "epoch,train_loss,val_accuracy,skipped\n1,0.5,0.75,2\n"
        );
        assert_eq!(
            history_path(Path::new("out/m.ckpt")),
            PathBuf::from("out/m.ckpt.history.csv")
        );
    }
}
