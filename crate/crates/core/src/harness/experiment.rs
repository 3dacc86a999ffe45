//! Experiment specs, solver dispatch, CSV traces and the speedup benchmark.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{parse_libsvm, SparseDataset};
use crate::error::{Error, Result};
use crate::objectives::{Loss, Objective, Regularizer};
use crate::solvers::{
    asaga_run, async_mig_run, kromagnon_run, mig_nsc_run, mig_sc_run, saga_run, sparse_mig_run,
    svrg_run, AsyncConfig, AveragingOption, EpochTrace, Restart, RunOutput, SolverConfig,
    SparseSolverConfig, StopRule,
};

use super::reference::{OptimumCache, ReferenceOptimum, ReferenceOptions};
use super::synthetic::{generate_synthetic, SyntheticSpec};

/// Suboptimality at which speedup runs are timed.
pub const SPEEDUP_THRESHOLD: f64 = 1e-5;

/// Header of every emitted trace file.
pub const TRACE_HEADER: &str = "epoch,oracle_calls,wall_ms,objective,subopt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverId {
    Mig,
    MigNsc,
    SparseMig,
    AsyncMig,
    Svrg,
    Saga,
    Kromagnon,
    Asaga,
}

impl SolverId {
    pub const ALL: [SolverId; 8] = [
        SolverId::Mig,
        SolverId::MigNsc,
        SolverId::SparseMig,
        SolverId::AsyncMig,
        SolverId::Svrg,
        SolverId::Saga,
        SolverId::Kromagnon,
        SolverId::Asaga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverId::Mig => "mig",
            SolverId::MigNsc => "mig-nsc",
            SolverId::SparseMig => "sparse-mig",
            SolverId::AsyncMig => "async-mig",
            SolverId::Svrg => "svrg",
            SolverId::Saga => "saga",
            SolverId::Kromagnon => "kromagnon",
            SolverId::Asaga => "asaga",
        }
    }

    /// Whether the solver runs lock-free workers.
    pub fn is_asynchronous(self) -> bool {
        matches!(self, SolverId::AsyncMig | SolverId::Kromagnon | SolverId::Asaga)
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SolverId::ALL.iter().map(|id| id.name()).collect();
                Error::config("solver", format!("unknown solver {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File {
        path: PathBuf,
        /// Pads the feature space to at least this many columns.
        min_cols: Option<usize>,
        bias: bool,
        normalize: bool,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<SparseDataset> {
        match self {
            DataSource::File {
                path,
                min_cols,
                bias,
                normalize,
            } => {
                let mut ds = parse_libsvm(std::io::BufReader::new(fs::File::open(path)?))?;
                if let Some(c) = min_cols {
                    ds = ds.with_min_cols(*c);
                }
                if *bias {
                    ds = ds.with_bias();
                }
                if *normalize {
                    ds = ds.normalize_rows();
                }
                Ok(ds)
            }
            DataSource::Synthetic(spec) => generate_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub loss: Loss,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub solver: SolverId,
    /// `config.threads` is the worker count for the asynchronous solvers.
    pub config: SolverConfig,
    pub option: AveragingOption,
    pub restart: Restart,
    pub out: Option<PathBuf>,
    /// `F*` cache file; `F*` is recomputed when absent.
    pub cache: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(data: DataSource, loss: Loss, regularizer: Regularizer, lambda: f64, solver: SolverId) -> Self {
        ExperimentSpec {
            data,
            loss,
            regularizer,
            lambda,
            solver,
            config: SolverConfig::default(),
            option: AveragingOption::II,
            restart: Restart::Never,
            out: None,
            cache: None,
        }
    }

    pub fn objective(&self, ds: &SparseDataset) -> Result<Objective> {
        Objective::new(self.loss, self.regularizer, self.lambda, ds)
    }
}

/// The synthetic sparse logistic problem timed by the speedup benchmark:
/// asynchronous MiG, option I with its automatic preset.
pub fn benchmark_spec() -> ExperimentSpec {
    ExperimentSpec {
        config: SolverConfig {
            epochs: 100,
            ..Default::default()
        },
        option: AveragingOption::I,
        ..ExperimentSpec::new(
            DataSource::Synthetic(SyntheticSpec::new(2000, 200, 10, 0.5, 1)),
            Loss::Logistic,
            Regularizer::L2,
            1e-3,
            SolverId::AsyncMig,
        )
    }
}

/// Runs solver `id` on a prepared problem.
pub fn run_solver(
    id: SolverId,
    obj: &Objective,
    ds: &SparseDataset,
    cfg: &SolverConfig,
    option: AveragingOption,
    restart: Restart,
) -> Result<RunOutput> {
    match id {
        SolverId::Mig => mig_sc_run(obj, ds, cfg),
        SolverId::MigNsc => mig_nsc_run(obj, ds, cfg),
        SolverId::Svrg => svrg_run(obj, ds, cfg),
        SolverId::Saga => saga_run(obj, ds, cfg),
        SolverId::SparseMig => sparse_mig_run(
            obj,
            ds,
            &SparseSolverConfig {
                base: cfg.clone(),
                option,
                restart,
            },
        ),
        SolverId::AsyncMig => async_mig_run(
            obj,
            ds,
            &AsyncConfig {
                base: cfg.clone(),
                option,
            },
        ),
        SolverId::Kromagnon => kromagnon_run(obj, ds, cfg),
        SolverId::Asaga => asaga_run(obj, ds, cfg),
    }
}

/// `F*` for `spec`'s problem, through the cache when one is configured.
pub fn resolve_reference(
    spec: &ExperimentSpec,
    obj: &Objective,
    ds: &SparseDataset,
) -> Result<ReferenceOptimum> {
    let opts = ReferenceOptions {
        threads: spec.config.threads,
        ..Default::default()
    };
    match &spec.cache {
        Some(path) => OptimumCache::open(path)?.get_or_compute(obj, ds, &opts),
        None => super::reference::reference_optimum_with(obj, ds, &opts),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub output: RunOutput,
    pub reference: ReferenceOptimum,
}

/// Loads the data, computes `F*`, runs the solver with suboptimality filled
/// in, and writes the CSV trace when `spec.out` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let ds = spec.data.load()?;
    let obj = spec.objective(&ds)?;
    let reference = resolve_reference(spec, &obj, &ds)?;
    let mut cfg = spec.config.clone();
    if cfg.stop.is_none() {
        cfg.stop = Some(StopRule {
            fstar: reference.fstar,
            tolerance: f64::NEG_INFINITY,
        });
    }
    let output = run_solver(spec.solver, &obj, &ds, &cfg, spec.option, spec.restart)?;
    if let Some(path) = &spec.out {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_trace_csv(fs::File::create(path)?, &output.traces)?;
    }
    Ok(ExperimentResult { output, reference })
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    epoch: usize,
    oracle_calls: u64,
    wall_ms: f64,
    objective: f64,
    subopt: Option<f64>,
}

/// Writes traces as CSV; a missing suboptimality is an empty field.
pub fn write_trace_csv<W: Write>(w: W, traces: &[EpochTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in traces {
        out.serialize(TraceRow {
            epoch: t.epoch,
            oracle_calls: t.oracle_calls,
            wall_ms: t.wall_ms,
            objective: t.objective,
            subopt: t.subopt,
        })?;
    }
    if traces.is_empty() {
        out.write_record(TRACE_HEADER.split(','))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<EpochTrace>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected trace header {:?}", header.join(",")),
        });
    }
    rd.deserialize()
        .map(|row| {
            let row: TraceRow = row?;
            Ok(EpochTrace {
                epoch: row.epoch,
                oracle_calls: row.oracle_calls,
                wall_ms: row.wall_ms,
                objective: row.objective,
                subopt: row.subopt,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupRow {
    pub threads: usize,
    /// Solver time until the threshold (or until the epoch limit).
    pub wall_ms: f64,
    /// One-thread time divided by this row's time; exactly `1.0` at one thread.
    pub speedup: f64,
    pub oracle_calls: u64,
    pub reached: bool,
}

/// Times `spec.solver` (which must be asynchronous) to [`SPEEDUP_THRESHOLD`]
/// suboptimality at each thread count. A one-thread baseline is run even
/// when `threads` does not list it.
pub fn speedup_bench(spec: &ExperimentSpec, threads: &[usize]) -> Result<Vec<SpeedupRow>> {
    if !spec.solver.is_asynchronous() {
        return Err(Error::config(
            "solver",
            format!("speedup needs an asynchronous solver, got {}", spec.solver),
        ));
    }
    if threads.is_empty() || threads.contains(&0) {
        return Err(Error::config("threads", "need a nonempty list of positive thread counts"));
    }
    let ds = spec.data.load()?;
    let obj = spec.objective(&ds)?;
    let reference = resolve_reference(spec, &obj, &ds)?;
    let time = |t: usize| -> Result<(f64, u64, bool)> {
        let cfg = SolverConfig {
            threads: t,
            stop: Some(StopRule {
                fstar: reference.fstar,
                tolerance: SPEEDUP_THRESHOLD,
            }),
            ..spec.config.clone()
        };
        let out = run_solver(spec.solver, &obj, &ds, &cfg, spec.option, spec.restart)?;
        let last = out.traces.last().expect("traces always hold epoch 0");
        let reached = last.subopt.is_some_and(|g| g <= SPEEDUP_THRESHOLD);
        Ok((last.wall_ms, last.oracle_calls, reached))
    };
    let baseline = time(1)?;
    threads
        .iter()
        .map(|&t| {
            let (wall_ms, oracle_calls, reached) = if t == 1 { baseline } else { time(t)? };
            let speedup = if t == 1 { 1.0 } else { baseline.0 / wall_ms };
            Ok(SpeedupRow {
                threads: t,
                wall_ms,
                speedup,
                oracle_calls,
                reached,
            })
        })
        .collect()
}
