//! Stochastic variance-reduced solvers.
//!
//! * [`dense`]: MiG for strongly convex problems, MiG^NSC, and the SVRG /
//!   Prox-SVRG and SAGA baselines, all with dense iterates and a proximal
//!   step for the regularizer.
//! * [`sparse`]: serial sparse MiG (options I and II, optional restarts) and a
//!   serial sparse SVRG reference. The l2 term is folded into the components
//!   so every inner step touches only the sampled support.
//! * [`asynchronous`]: lock-free multi-threaded sparse MiG, KroMagnon and
//!   ASAGA over a [`shared::SharedIterate`].
//!
//! All solvers sample with replacement from a [`SampleStream`] keyed by
//! `(seed, epoch, step)` and report one [`EpochTrace`] per epoch, preceded by
//! an epoch-0 record for the starting point.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::rng::SampleStream;

pub mod asynchronous;
pub mod dense;
pub mod params;
pub mod shared;
pub mod sparse;

pub use asynchronous::{asaga_run, async_mig_run, kromagnon_run};
pub use dense::{mig_nsc_run, mig_sc_run, saga_run, svrg_run, weighted_epoch_average, WeightedAverage};
pub use params::{hood_epoch_budget, nsc_schedule, restart_period, theoretical_params_sc};
pub use sparse::{sparse_mig_epoch, sparse_mig_run, sparse_svrg_run, SparseMigState};

/// A parameter that is either chosen by the solver's rule or fixed by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting<T> {
    Auto,
    Fixed(T),
}

impl<T: Copy> Setting<T> {
    pub fn or(self, auto: T) -> T {
        match self {
            Setting::Auto => auto,
            Setting::Fixed(v) => v,
        }
    }

    pub fn fixed(self) -> Option<T> {
        match self {
            Setting::Auto => None,
            Setting::Fixed(v) => Some(v),
        }
    }
}

/// Inner-loop averaging / restart-point option of the sparse variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AveragingOption {
    /// Average `x_0..x_{m-1}` and restart the epoch from the new snapshot.
    I,
    /// Average `x_1..x_m` and continue from the last iterate.
    II,
}

/// How SAGA's per-sample table is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SagaTable {
    /// Fill with the derivatives at the starting point (costs `n` oracle calls).
    #[default]
    Initialized,
    /// Start from an all-zero table.
    Zero,
}

/// Early stopping once `F(x) - F* <= tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub fstar: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Inner iterations per epoch.
    pub m: Setting<usize>,
    pub eta: Setting<f64>,
    pub theta: Setting<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Workers used for full-gradient reductions.
    pub threads: usize,
    /// Starting point; zero when absent.
    pub x0: Option<Vec<f64>>,
    /// When set, traces carry suboptimality against `fstar`, and the run stops
    /// after the first epoch within `tolerance`.
    pub stop: Option<StopRule>,
    pub saga_table: SagaTable,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            m: Setting::Auto,
            eta: Setting::Auto,
            theta: Setting::Auto,
            epochs: 10,
            seed: 0,
            threads: 1,
            x0: None,
            stop: None,
            saga_table: SagaTable::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Setting::Fixed(m) = self.m {
            if m == 0 {
                return Err(Error::config("m", "epoch length must be >= 1"));
            }
        }
        if let Setting::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("eta", format!("must be finite and > 0, got {eta}")));
            }
        }
        if let Setting::Fixed(theta) = self.theta {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::config("theta", format!("must lie in (0, 1], got {theta}")));
            }
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn initial_point(&self, d: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            None => Ok(vec![0.0; d]),
            Some(x0) if x0.len() == d => Ok(x0.clone()),
            Some(x0) => Err(Error::config(
                "x0",
                format!("starting point has {} entries, problem has {d}", x0.len()),
            )),
        }
    }

    pub(crate) fn stream(&self) -> SampleStream {
        SampleStream::new(self.seed)
    }
}

/// When the sparse option II run restarts from the mean of recent snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Restart {
    #[default]
    Never,
    /// Period from the sparse-variance restart rule.
    Auto,
    Every(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolverConfig {
    pub base: SolverConfig,
    pub option: AveragingOption,
    /// Ignored by option I.
    pub restart: Restart,
}

impl Default for SparseSolverConfig {
    fn default() -> Self {
        SparseSolverConfig {
            base: SolverConfig::default(),
            option: AveragingOption::II,
            restart: Restart::Never,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncConfig {
    /// `base.threads` is the number of workers.
    pub base: SolverConfig,
    pub option: AveragingOption,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig {
            base: SolverConfig::default(),
            option: AveragingOption::II,
        }
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Cumulative component-gradient evaluations (`n` per full gradient).
    pub oracle_calls: u64,
    /// Cumulative solver time, excluding objective evaluations for the trace.
    pub wall_ms: f64,
    pub objective: f64,
    pub subopt: Option<f64>,
}

/// Extra information a solver reports alongside its trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Resolved epoch length, step size and coupling parameter.
    pub m: usize,
    pub eta: f64,
    pub theta: f64,
    /// `D_m^2 - D_m` for the sparse variants.
    pub zeta: Option<f64>,
    pub restart_period: Option<usize>,
    /// Set when the data violates the sparse-variance condition under which
    /// the restarted option II enjoys its accelerated rate.
    pub sparse_variance_warning: Option<String>,
    /// Inner iterations actually executed per epoch (asynchronous solvers).
    pub iterations_per_epoch: Vec<usize>,
    /// Largest number of other iterations observed to start while one was in
    /// flight (an empirical estimate of the overlap bound τ).
    pub max_overlap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub x: Vec<f64>,
    pub traces: Vec<EpochTrace>,
    pub diagnostics: Diagnostics,
}

/// Collects traces with a clock that is paused while the objective is evaluated.
pub(crate) struct TraceRecorder {
    start: Instant,
    excluded: Duration,
    stop: Option<StopRule>,
    traces: Vec<EpochTrace>,
}

impl TraceRecorder {
    pub(crate) fn new(stop: Option<StopRule>) -> Self {
        TraceRecorder {
            start: Instant::now(),
            excluded: Duration::ZERO,
            stop,
            traces: Vec::new(),
        }
    }

    /// Records an epoch; returns `true` when the stop rule is met.
    pub(crate) fn record(&mut self, epoch: usize, oracle_calls: u64, evaluate: impl FnOnce() -> f64) -> bool {
        let worked = self.start.elapsed() - self.excluded;
        let eval_start = Instant::now();
        let objective = evaluate();
        self.excluded += eval_start.elapsed();
        let subopt = self.stop.map(|s| objective - s.fstar);
        self.traces.push(EpochTrace {
            epoch,
            oracle_calls,
            wall_ms: worked.as_secs_f64() * 1e3,
            objective,
            subopt,
        });
        match (self.stop, subopt) {
            (Some(rule), Some(gap)) => gap <= rule.tolerance,
            _ => false,
        }
    }

    pub(crate) fn finish(self) -> Vec<EpochTrace> {
        self.traces
    }
}

pub(crate) fn require_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("data", "dataset has no samples"));
    }
    Ok(())
}

/// `ceil(multiplier · κ)`, at least 1.
pub(crate) fn epoch_length_from_kappa(multiplier: f64, kappa: f64) -> Result<usize> {
    if !kappa.is_finite() {
        return Err(Error::config(
            "m",
            "automatic epoch length needs sigma > 0 (set --m explicitly)",
        ));
    }
    let m = (multiplier * kappa).ceil();
    if m > usize::MAX as f64 / 2.0 {
        return Err(Error::config("m", format!("epoch length {m} is too large")));
    }
    Ok((m as usize).max(1))
}
