use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mig_core::harness::{
    benchmark_spec, resolve_reference, run_experiment, speedup_bench, write_trace_csv, DataSource, ExperimentSpec,
    SolverId, SyntheticSpec, SPEEDUP_THRESHOLD,
};
use mig_core::solvers::{AveragingOption, Restart, Setting, SolverConfig};
use mig_core::{Loss, Regularizer};

#[derive(Parser)]
#[command(name = "mig", version, about = "Accelerated variance-reduced solvers for sparse GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and emit its convergence trace as CSV.
    Run(RunArgs),
    /// Compute (or look up) the reference optimum F*.
    Fstar(FstarArgs),
    /// Time an asynchronous solver at several thread counts.
    Speedup(SpeedupArgs),
}

#[derive(Args)]
struct DataArgs {
    /// LIBSVM-format data file.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic data as n,d,nnz,noise.
    #[arg(long, value_name = "N,D,NNZ,NOISE", value_parser = parse_synthetic)]
    synthetic: Option<(usize, usize, usize, f64)>,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Pad the feature space of a data file to this many columns.
    #[arg(long)]
    n_cols: Option<usize>,
    /// Append a constant bias feature to data files.
    #[arg(long)]
    bias: bool,
    /// Keep data file rows as read instead of scaling them to unit norm.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct ObjectiveArgs {
    #[arg(long, value_enum, default_value_t = LossArg::Logistic)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = RegArg::L2)]
    reg: RegArg,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// F* cache file, created on first use.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "mig", value_parser = parse_solver)]
    solver: SolverId,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Inner iterations per epoch, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_setting::<usize>)]
    m: Setting<usize>,
    /// Step size, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_setting::<f64>)]
    eta: Setting<f64>,
    /// Coupling parameter in (0, 1], or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_setting::<f64>)]
    theta: Setting<f64>,
    /// Averaging option of the sparse and asynchronous MiG variants.
    #[arg(long, value_enum, default_value_t = OptionArg::II)]
    option: OptionArg,
    /// Restart schedule for sparse MiG option II: never, auto, or a period.
    #[arg(long, default_value = "never", value_parser = parse_restart)]
    restart: Restart,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Trace CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FstarArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct SpeedupArgs {
    /// Data source; the built-in benchmark problem when omitted.
    #[command(flatten)]
    data: DataArgs,
    /// Overrides the benchmark's lambda.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "async-mig", value_parser = parse_solver)]
    solver: SolverId,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = OptionArg::I)]
    option: OptionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    Ridge,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    L2,
    L1,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptionArg {
    #[value(name = "I")]
    I,
    #[value(name = "II")]
    II,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Logistic => Loss::Logistic,
            LossArg::Ridge => Loss::Squared,
        }
    }
}

impl From<RegArg> for Regularizer {
    fn from(r: RegArg) -> Self {
        match r {
            RegArg::L2 => Regularizer::L2,
            RegArg::L1 => Regularizer::L1,
            RegArg::None => Regularizer::None,
        }
    }
}

impl From<OptionArg> for AveragingOption {
    fn from(o: OptionArg) -> Self {
        match o {
            OptionArg::I => AveragingOption::I,
            OptionArg::II => AveragingOption::II,
        }
    }
}

fn parse_synthetic(s: &str) -> Result<(usize, usize, usize, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [n, d, nnz, noise] = parts[..] else {
        return Err(format!("expected n,d,nnz,noise, got {s:?}"));
    };
    let int = |v: &str, name: &str| v.parse::<usize>().map_err(|e| format!("{name}: {e}"));
    let noise = noise.parse::<f64>().map_err(|e| format!("noise: {e}"))?;
    Ok((int(n, "n")?, int(d, "d")?, int(nnz, "nnz")?, noise))
}

fn parse_setting<T: FromStr>(s: &str) -> Result<Setting<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s == "auto" {
        return Ok(Setting::Auto);
    }
    s.parse().map(Setting::Fixed).map_err(|e| format!("{e} (or `auto`)"))
}

fn parse_restart(s: &str) -> Result<Restart, String> {
    match s {
        "never" => Ok(Restart::Never),
        "auto" => Ok(Restart::Auto),
        k => k
            .parse()
            .map(Restart::Every)
            .map_err(|_| format!("expected never, auto or a period, got {k:?}")),
    }
}

fn parse_solver(s: &str) -> Result<SolverId, String> {
    s.parse().map_err(|e: mig_core::Error| e.to_string())
}

impl DataArgs {
    fn is_set(&self) -> bool {
        self.data.is_some() || self.synthetic.is_some()
    }

    fn source(&self, loss: Loss) -> Result<DataSource> {
        match (&self.data, self.synthetic) {
            (Some(path), _) => Ok(DataSource::File {
                path: path.clone(),
                min_cols: self.n_cols,
                bias: self.bias,
                normalize: !self.no_normalize,
            }),
            (None, Some((n, d, nnz, noise))) => {
                let spec = SyntheticSpec::new(n, d, nnz, noise, self.data_seed);
                Ok(DataSource::Synthetic(match loss {
                    Loss::Squared => spec.regression(),
                    Loss::Logistic => spec,
                }))
            }
            (None, None) => bail!("one of --data or --synthetic is required"),
        }
    }
}

fn base_spec(data: &DataArgs, objective: &ObjectiveArgs, solver: SolverId) -> Result<ExperimentSpec> {
    let loss = objective.loss.into();
    let mut spec = ExperimentSpec::new(data.source(loss)?, loss, objective.reg.into(), objective.lambda, solver);
    spec.cache = objective.cache.clone();
    Ok(spec)
}

fn run(args: RunArgs) -> Result<()> {
    let s = &args.solver;
    let mut spec = base_spec(&args.data, &args.objective, s.solver)?;
    spec.config = SolverConfig {
        m: s.m,
        eta: s.eta,
        theta: s.theta,
        epochs: s.epochs,
        seed: s.seed,
        threads: args.threads,
        ..Default::default()
    };
    spec.option = s.option.into();
    spec.restart = s.restart;
    spec.out = args.out.clone();

    let res = run_experiment(&spec)?;
    if args.out.is_none() {
        write_trace_csv(io::stdout().lock(), &res.output.traces)?;
    }
    let diag = &res.output.diagnostics;
    let last = res.output.traces.last().context("empty trace")?;
    eprintln!(
        "{}: m = {}, eta = {:.6e}, theta = {:.6}; epoch {} objective {:.12e} subopt {:.3e}",
        spec.solver,
        diag.m,
        diag.eta,
        diag.theta,
        last.epoch,
        last.objective,
        last.subopt.unwrap_or(f64::NAN)
    );
    if let Some(w) = &diag.sparse_variance_warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn fstar(args: FstarArgs) -> Result<()> {
    let mut spec = base_spec(&args.data, &args.objective, SolverId::Mig)?;
    spec.config.threads = args.threads;
    let ds = spec.data.load()?;
    let obj = spec.objective(&ds)?;
    let r = resolve_reference(&spec, &obj, &ds)?;
    let mut out = io::stdout().lock();
    writeln!(out, "fstar {:.17e}", r.fstar)?;
    writeln!(out, "certified {}", r.certified)?;
    writeln!(out, "iterations {}", r.iterations)?;
    writeln!(out, "gradient_mapping_norm {:.3e}", r.gradient_mapping_norm)?;
    writeln!(out, "key {}", r.key)?;
    Ok(())
}

fn speedup(args: SpeedupArgs) -> Result<()> {
    let mut spec = benchmark_spec();
    if args.data.is_set() {
        spec.data = args.data.source(spec.loss)?;
    }
    if let Some(lambda) = args.lambda {
        spec.lambda = lambda;
    }
    spec.solver = args.solver;
    spec.cache = args.cache;
    spec.option = args.option.into();
    spec.config.epochs = args.epochs;
    spec.config.seed = args.seed;

    let rows = speedup_bench(&spec, &args.threads)?;
    let mut out = io::stdout().lock();
    writeln!(out, "threads,wall_ms,speedup,oracle_calls,reached")?;
    for r in &rows {
        writeln!(out, "{},{:.3},{:.3},{},{}", r.threads, r.wall_ms, r.speedup, r.oracle_calls, r.reached)?;
    }
    if rows.iter().any(|r| !r.reached) {
        eprintln!("warning: some runs stopped before reaching subopt {SPEEDUP_THRESHOLD:e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Fstar(a) => fstar(a),
        Command::Speedup(a) => speedup(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
