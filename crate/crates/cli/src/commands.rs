use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ksmooth_core::autotune::{tune_with_progress, TuneConfig, TuneRecord};
use ksmooth_core::datagen::{misspecify, simulate, SimKind, SimSpec};
use ksmooth_core::{forward, gradient, judge, prediction_error, split_known, EntrySet, MeasurementSet, ParameterSet};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    fmt_f64, format_measurements, format_params, format_table, read_json, read_measurements, read_params, to_json,
    write_file, HeaderMode,
};

#[derive(Debug, Clone, Parser)]
#[command(name = "ksmooth", version, about = "Kalman smoothing with missing measurements and auto-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Smooth a measurement file with given parameters.
    Smooth(SmoothArgs),
    /// Tune parameters by proximal gradient on a held-out prediction error.
    Tune(TuneArgs),
    /// Simulate a linear system and write measurements and ground truth.
    Simulate(CommonArgs),
    /// Time the forward solve and the gradient for a grid of lengths.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output files (created if missing).
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Seed overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Measurement CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Parameter JSON (overrides `params` in the configuration).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Whether the measurement file starts with a header row.
    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    pub header: HeaderMode,
    #[arg(long)]
    pub mask_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SmoothArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub step0: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Do not log iterations to stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of timed runs per length.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Comma separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<usize>>,
}

/// Runs a command and returns the text for stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Smooth(a) => cmd_smooth(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn load_config(common: &CommonArgs) -> CliResult<RunConfig> {
    match &common.config {
        Some(path) => read_json(path),
        None => Ok(RunConfig::default()),
    }
}

fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    inputs: BTreeMap<&'static str, String>,
    config: &'a RunConfig,
}

fn write_metadata(
    dir: &Path,
    command: &'static str,
    seed: u64,
    inputs: BTreeMap<&'static str, String>,
    config: &RunConfig,
) -> CliResult<()> {
    let meta = Metadata { tool: "ksmooth", version: env!("CARGO_PKG_VERSION"), command, seed, inputs, config };
    write_file(&dir.join("metadata.json"), &to_json(&meta))
}

fn check_fraction(name: &str, v: f64) -> CliResult<f64> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} = {v} must lie in [0, 1)")))
    }
}

struct Loaded {
    config: RunConfig,
    meas: MeasurementSet,
    params: ParameterSet,
    inputs: BTreeMap<&'static str, String>,
}

fn load_data(common: &CommonArgs, data: &DataArgs) -> CliResult<Loaded> {
    let mut config = load_config(common)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("input", data.input.display().to_string());
    if let Some(path) = &common.config {
        inputs.insert("config", path.display().to_string());
    }
    let meas = read_measurements(&data.input, data.header)?;
    let params = match (&data.params, &config.params) {
        (Some(path), _) => {
            inputs.insert("params", path.display().to_string());
            read_params(path)?
        }
        (None, Some(doc)) => doc.to_params()?,
        (None, None) => return Err(CliError::config("no parameters: pass --params or set `params` in the config")),
    };
    ksmooth_core::validate_dims(&params, &meas)?;
    config.params = Some((&params).into());
    Ok(Loaded { config, meas, params, inputs })
}

#[derive(Serialize)]
struct SmoothSummary {
    #[serde(rename = "T")]
    t: usize,
    n: usize,
    p: usize,
    constrained: usize,
    objective: f64,
    kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    masked_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_error: Option<f64>,
}

fn cmd_smooth(args: &SmoothArgs) -> CliResult<String> {
    let Loaded { mut config, meas, params, inputs } = load_data(&args.common, &args.data)?;
    if let Some(seed) = args.common.seed {
        config.split.seed = seed;
    }
    config.split.mask_frac = check_fraction("mask_frac", args.data.mask_frac.unwrap_or(0.0))?;
    config.split.test_frac = check_fraction("test_frac", args.data.test_frac.unwrap_or(0.0))?;
    let split = split_known(meas.known(), config.split.mask_frac, config.split.test_frac, config.split.seed)?;
    let constrained = split.train.clone();
    let fwd = forward(&params, &meas, &constrained)?;
    let held_out = |set: &EntrySet| -> CliResult<Option<f64>> {
        if set.is_empty() {
            Ok(None)
        } else {
            Ok(Some(prediction_error(&fwd.solution, &meas, set)?))
        }
    };
    let summary = SmoothSummary {
        t: meas.len_t(),
        n: params.n(),
        p: params.p(),
        constrained: constrained.len(),
        objective: fwd.objective(),
        kkt_residual: fwd.residual,
        masked_error: held_out(&split.masked)?,
        test_error: held_out(&split.test)?,
    };

    let dir = &args.common.out_dir;
    prepare_out_dir(dir)?;
    write_file(&dir.join("xhat.csv"), &format_table(&fwd.solution.xhat, "x"))?;
    write_file(&dir.join("yhat.csv"), &format_table(&fwd.solution.yhat, "y"))?;
    write_file(&dir.join("summary.json"), &to_json(&summary))?;
    write_metadata(dir, "smooth", config.split.seed, inputs, &config)?;

    let mut out = String::new();
    writeln!(out, "objective {}", fmt_f64(summary.objective)).unwrap();
    writeln!(out, "kkt_residual {}", fmt_f64(summary.kkt_residual)).unwrap();
    if let Some(v) = summary.masked_error {
        writeln!(out, "masked_error {}", fmt_f64(v)).unwrap();
    }
    if let Some(v) = summary.test_error {
        writeln!(out, "test_error {}", fmt_f64(v)).unwrap();
    }
    Ok(out)
}

#[derive(Serialize)]
struct Scores {
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "L")]
    l: f64,
    r: f64,
    train_error: f64,
    test_error: f64,
}

#[derive(Serialize)]
struct TuneSummary {
    termination: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    iterations: usize,
    accepted: usize,
    masked: usize,
    test: usize,
    initial: Scores,
    #[serde(rename = "final")]
    last: Scores,
}

pub fn format_history(history: &[TuneRecord]) -> String {
    let mut out = String::from("k,F,L,r,t,accepted\n");
    for rec in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.k,
            fmt_f64(rec.F),
            fmt_f64(rec.L),
            fmt_f64(rec.r),
            fmt_f64(rec.t),
            u8::from(rec.accepted)
        )
        .unwrap();
    }
    out
}

fn cmd_tune(args: &TuneArgs) -> CliResult<String> {
    let Loaded { mut config, meas, params, inputs } = load_data(&args.common, &args.data)?;
    if let Some(seed) = args.common.seed {
        config.split.seed = seed;
    }
    if let Some(v) = args.data.mask_frac {
        config.split.mask_frac = v;
    }
    if let Some(v) = args.data.test_frac {
        config.split.test_frac = v;
    }
    if let Some(v) = args.iters {
        config.tune.n_iter = v;
    }
    if let Some(v) = args.step0 {
        config.tune.t0 = v;
    }
    if let Some(v) = args.eps {
        config.tune.eps = v;
    }
    let reg = config.regularizer.build(&params)?;
    let cfg = TuneConfig {
        theta0: params.clone(),
        reg,
        t0: config.tune.t0,
        n_iter: config.tune.n_iter,
        eps: config.tune.eps,
        seed: config.split.seed,
    };
    cfg.validate()?;
    let split = split_known(meas.known(), config.split.mask_frac, config.split.test_frac, config.split.seed)?;
    if split.masked.is_empty() {
        return Err(CliError::config("masked set is empty; increase mask_frac"));
    }
    let constrained = split.train.clone();

    let quiet = args.quiet;
    let result = tune_with_progress(&cfg, &meas, &split.masked, &constrained, |rec| {
        if !quiet {
            eprintln!(
                "k={} F={} L={} r={} t={} accepted={}",
                rec.k,
                fmt_f64(rec.F),
                fmt_f64(rec.L),
                fmt_f64(rec.r),
                fmt_f64(rec.t),
                rec.accepted
            );
        }
    })?;
    let before = judge(&params, &meas, &split.masked, &split.test)?;
    let after = judge(&result.theta_final, &meas, &split.masked, &split.test)?;
    let summary = TuneSummary {
        termination: result.termination.as_str(),
        failure: result.failure.as_ref().map(ToString::to_string),
        iterations: result.history.len(),
        accepted: result.history.iter().filter(|r| r.accepted).count(),
        masked: split.masked.len(),
        test: split.test.len(),
        initial: Scores {
            f: result.initial.F,
            l: result.initial.L,
            r: result.initial.r,
            train_error: before.train_error,
            test_error: before.test_error,
        },
        last: Scores {
            f: result.last.F,
            l: result.last.L,
            r: result.last.r,
            train_error: after.train_error,
            test_error: after.test_error,
        },
    };

    let dir = &args.common.out_dir;
    prepare_out_dir(dir)?;
    write_file(&dir.join("tuned_params.json"), &format_params(&result.theta_final))?;
    write_file(&dir.join("history.csv"), &format_history(&result.history))?;
    write_file(&dir.join("summary.json"), &to_json(&summary))?;
    write_metadata(dir, "tune", config.split.seed, inputs, &config)?;

    let mut out = String::new();
    writeln!(out, "termination {}", summary.termination).unwrap();
    writeln!(out, "iterations {}", summary.iterations).unwrap();
    writeln!(out, "train_error {} -> {}", fmt_f64(before.train_error), fmt_f64(after.train_error)).unwrap();
    writeln!(out, "test_error {} -> {}", fmt_f64(before.test_error), fmt_f64(after.test_error)).unwrap();
    Ok(out)
}

fn cmd_simulate(args: &CommonArgs) -> CliResult<String> {
    let mut config = load_config(args)?;
    if let Some(seed) = args.seed {
        config.simulate.seed = seed;
    }
    let spec = config.simulate.spec()?;
    let changes = config.simulate.misspecifications()?;
    let sim = simulate(&spec)?;

    let dir = &args.out_dir;
    prepare_out_dir(dir)?;
    write_file(&dir.join("measurements.csv"), &format_measurements(&sim.meas))?;
    write_file(&dir.join("true_params.json"), &format_params(&sim.params))?;
    write_file(&dir.join("true_states.csv"), &format_table(&sim.states, "x"))?;
    if !changes.is_empty() {
        let initial = changes.into_iter().fold(sim.params.clone(), |p, m| misspecify(&p, m));
        write_file(&dir.join("initial_params.json"), &format_params(&initial))?;
    }
    let mut inputs = BTreeMap::new();
    if let Some(path) = &args.config {
        inputs.insert("config", path.display().to_string());
    }
    write_metadata(dir, "simulate", spec.seed, inputs, &config)?;

    let (n, p) = spec.dims();
    Ok(format!(
        "T {}\nn {n}\np {p}\nknown {}\n",
        spec.T,
        sim.meas.known().len()
    ))
}

/// Mean wall times in seconds for one sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub forward: f64,
    pub backward: f64,
}

/// Times the forward solve and, reusing its factorization, the gradient on a
/// random stable system with `n` states and `p` outputs, for every length in
/// `grid`. Rounds are interleaved across the grid so a transient slowdown
/// does not land on a single length; one untimed warm-up round precedes the
/// `runs` timed ones.
pub fn bench_grid(
    n: usize,
    p: usize,
    grid: &[usize],
    runs: usize,
    mask_frac: f64,
    seed: u64,
) -> CliResult<Vec<BenchRow>> {
    let mut cases = Vec::with_capacity(grid.len());
    for &len in grid {
        let spec = SimSpec {
            kind: SimKind::Random { n, p, spectral_radius: 0.9 },
            T: len,
            W: DMatrix::identity(n, n),
            V: DMatrix::identity(p, p),
            seed,
            known_frac: 1.0,
        };
        let sim = simulate(&spec)?;
        let split = split_known(sim.meas.known(), mask_frac, 0.0, seed)?;
        cases.push((sim, split));
    }
    let mut totals = vec![(0.0, 0.0); grid.len()];
    for round in 0..=runs {
        for ((sim, split), total) in cases.iter().zip(totals.iter_mut()) {
            let start = Instant::now();
            let fwd = forward(&sim.params, &sim.meas, &split.train)?;
            let mid = Instant::now();
            let (_, grad) = gradient(&sim.params, &sim.meas, &split.masked, &fwd)?;
            let end = Instant::now();
            std::hint::black_box(grad);
            drop(fwd);
            if round > 0 {
                total.0 += (mid - start).as_secs_f64();
                total.1 += (end - mid).as_secs_f64();
            }
        }
    }
    let runs = runs.max(1) as f64;
    Ok(grid
        .iter()
        .zip(totals)
        .map(|(&len, (f, b))| BenchRow { t: len, forward: f / runs, backward: b / runs })
        .collect())
}

fn cmd_bench(args: &BenchArgs) -> CliResult<String> {
    let mut config = load_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        config.bench.seed = seed;
    }
    if let Some(runs) = args.runs {
        config.bench.runs = runs;
    }
    if let Some(grid) = &args.t_grid {
        config.bench.t_grid = grid.clone();
    }
    let b = &config.bench;
    if b.runs == 0 || b.t_grid.is_empty() || b.t_grid.contains(&0) {
        return Err(CliError::config("bench needs runs >= 1 and a nonempty grid of positive lengths"));
    }
    check_fraction("mask_frac", b.mask_frac)?;
    let mut table = String::from("T,forward_seconds,backward_seconds,backward_over_forward\n");
    for row in bench_grid(b.n, b.p, &b.t_grid, b.runs, b.mask_frac, b.seed)? {
        writeln!(
            table,
            "{},{},{},{}",
            row.t,
            fmt_f64(row.forward),
            fmt_f64(row.backward),
            fmt_f64(row.backward / row.forward)
        )
        .unwrap();
    }
    let dir = &args.common.out_dir;
    prepare_out_dir(dir)?;
    write_file(&dir.join("bench.csv"), &table)?;
    let mut inputs = BTreeMap::new();
    if let Some(path) = &args.common.config {
        inputs.insert("config", path.display().to_string());
    }
    write_metadata(dir, "bench", config.bench.seed, inputs, &config)?;
    Ok(table)
}
