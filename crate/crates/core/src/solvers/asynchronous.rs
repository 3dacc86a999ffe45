//! Lock-free asynchronous sparse solvers.
//!
//! Workers share one [`SharedIterate`]. Each inner step claims a label `j`
//! from the shared counter, samples `i` from the stream at `(epoch, j)`, reads
//! the iterate on the support of row `i` without locking, and applies its
//! update coordinate by coordinate with atomic adds. Because sampling is keyed
//! by the label rather than by the worker, a one-thread run reproduces the
//! serial solver's sample sequence exactly.
//!
//! Workers stop claiming labels once `m` have been issued; a worker that
//! checked the counter just before the limit may still finish one step with
//! a label above `m`. Such overshoot steps move `x` but carry no weight in the
//! epoch average.

use std::thread;

use crate::dataset::{FeatureStats, SparseDataset};
use crate::error::Result;
use crate::objectives::Objective;
use crate::rng::SampleStream;

use super::params::ASYNC_OPTION_I_PRESET;
use super::shared::{AtomicVec, SharedIterate};
use super::sparse::{resolve_sparse_params, SparseKernel};
use super::{
    require_samples, AsyncConfig, AveragingOption, Diagnostics, RunOutput, SagaTable, SolverConfig,
    TraceRecorder,
};

#[derive(Debug, Clone, Copy, Default)]
struct WorkerStats {
    iterations: usize,
    max_overlap: usize,
}

impl WorkerStats {
    #[inline]
    fn step(&mut self, label: usize, counter_after: usize) {
        self.iterations += 1;
        self.max_overlap = self.max_overlap.max(counter_after.saturating_sub(label));
    }
}

/// Runs `work` on `threads` workers (inline when there is only one) and sums
/// their statistics.
fn run_workers<F>(threads: usize, work: F) -> WorkerStats
where
    F: Fn() -> WorkerStats + Sync,
{
    let all: Vec<WorkerStats> = if threads == 1 {
        vec![work()]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(&work)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("solver worker panicked"))
                .collect()
        })
    };
    all.iter().fold(WorkerStats::default(), |acc, w| WorkerStats {
        iterations: acc.iterations + w.iterations,
        max_overlap: acc.max_overlap.max(w.max_overlap),
    })
}

struct MigWorker<'a> {
    shared: &'a SharedIterate,
    kernel: &'a SparseKernel<'a>,
    ds: &'a SparseDataset,
    stream: SampleStream,
    epoch: u64,
    m: usize,
    option: AveragingOption,
}

impl MigWorker<'_> {
    fn run(&self) -> WorkerStats {
        let n = self.ds.n_samples();
        let d = self.shared.x.len();
        let inv_m = 1.0 / self.m as f64;
        let mut stats = WorkerStats::default();
        let mut dense = match self.option {
            AveragingOption::I => vec![0.0; d],
            AveragingOption::II => Vec::new(),
        };
        let mut x_hat = Vec::new();
        let mut u = Vec::new();
        while self.shared.steps_taken() < self.m {
            let j = match self.option {
                AveragingOption::I => {
                    // the average needs the whole iterate this step read
                    self.shared.x.read_into(&mut dense);
                    let j = self.shared.next_step();
                    let i = self.stream.index(self.epoch, j as u64, n);
                    let row = self.ds.row(i);
                    x_hat.clear();
                    x_hat.extend(row.indices.iter().map(|&k| dense[k]));
                    self.kernel.update(i, &x_hat, &mut u);
                    for (&k, &uk) in row.indices.iter().zip(&u) {
                        self.shared.x.get(k).fetch_add(uk);
                    }
                    if j <= self.m {
                        for (k, &v) in dense.iter().enumerate() {
                            if v != 0.0 {
                                self.shared.xbar.get(k).fetch_add(v * inv_m);
                            }
                        }
                    }
                    j
                }
                AveragingOption::II => {
                    let j = self.shared.next_step();
                    let i = self.stream.index(self.epoch, j as u64, n);
                    let row = self.ds.row(i);
                    x_hat.resize(row.len(), 0.0);
                    self.shared.x.gather_into(row.indices, &mut x_hat);
                    self.kernel.update(i, &x_hat, &mut u);
                    // x̄ = x_0 + Σ_j (m+1-j)/m · u_j telescopes to the mean of x_1..x_m
                    let w = (self.m + 1).saturating_sub(j) as f64 * inv_m;
                    for (&k, &uk) in row.indices.iter().zip(&u) {
                        self.shared.x.get(k).fetch_add(uk);
                        if w > 0.0 {
                            self.shared.xbar.get(k).fetch_add(uk * w);
                        }
                    }
                    j
                }
            };
            stats.step(j, self.shared.steps_taken());
        }
        stats
    }
}

fn check_sparse_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<(usize, usize, FeatureStats)> {
    cfg.validate()?;
    obj.require_foldable()?;
    let n = ds.n_samples();
    require_samples(n)?;
    Ok((n, ds.n_features(), ds.feature_stats()))
}

/// Asynchronous sparse MiG with `cfg.base.threads` lock-free workers.
pub fn async_mig_run(obj: &Objective, ds: &SparseDataset, cfg: &AsyncConfig) -> Result<RunOutput> {
    let base = &cfg.base;
    let (n, d, stats) = check_sparse_run(obj, ds, base)?;
    let (m, eta, theta) = resolve_sparse_params(obj, n, base, cfg.option, ASYNC_OPTION_I_PRESET)?;
    let stream = base.stream();

    let mut x_tilde = base.initial_point(d)?;
    let shared = SharedIterate::new(&x_tilde);
    let mut per_epoch = Vec::new();
    let mut max_overlap = 0;
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(base.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));

    let mut s = 1;
    while s <= base.epochs && !done {
        let mu = obj.smooth_full_gradient(ds, &x_tilde, base.threads)?;
        let kernel = SparseKernel::new(obj, ds, &stats, &mu, &x_tilde, theta, eta);
        match cfg.option {
            AveragingOption::I => shared.zero_xbar(),
            AveragingOption::II => shared.copy_x_to_xbar(),
        }
        shared.reset_counter();
        let worker = MigWorker {
            shared: &shared,
            kernel: &kernel,
            ds,
            stream,
            epoch: s as u64,
            m,
            option: cfg.option,
        };
        let ws = run_workers(base.threads, || worker.run());
        drop(kernel);

        let xbar = shared.xbar.to_vec();
        for (t, b) in x_tilde.iter_mut().zip(&xbar) {
            *t = theta * b + (1.0 - theta) * *t;
        }
        if cfg.option == AveragingOption::I {
            shared.x.store_all(&x_tilde);
        }
        per_epoch.push(ws.iterations);
        max_overlap = max_overlap.max(ws.max_overlap);
        calls += (n + ws.iterations) as u64;
        done = rec.record(s, calls, || obj.evaluate(ds, &x_tilde));
        s += 1;
    }

    Ok(RunOutput {
        x: x_tilde,
        traces: rec.finish(),
        diagnostics: Diagnostics {
            m,
            eta,
            theta,
            zeta: Some(stats.zeta()),
            iterations_per_epoch: per_epoch,
            max_overlap: Some(max_overlap),
            ..Default::default()
        },
    })
}

/// KroMagnon: asynchronous sparse SVRG, i.e. the MiG worker at `θ = 1` with
/// the snapshot taken at the shared iterate after each epoch.
pub fn kromagnon_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    let (n, d, stats) = check_sparse_run(obj, ds, cfg)?;
    let m = cfg.m.or(2 * n);
    let eta = cfg.eta.or(1.0 / (4.0 * obj.smoothness()));
    let stream = cfg.stream();

    let mut x_tilde = cfg.initial_point(d)?;
    let shared = SharedIterate::new(&x_tilde);
    let mut per_epoch = Vec::new();
    let mut max_overlap = 0;
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));

    let mut s = 1;
    while s <= cfg.epochs && !done {
        let mu = obj.smooth_full_gradient(ds, &x_tilde, cfg.threads)?;
        let kernel = SparseKernel::new(obj, ds, &stats, &mu, &x_tilde, 1.0, eta);
        shared.reset_counter();
        let epoch = s as u64;
        let ws = run_workers(cfg.threads, || {
            let mut st = WorkerStats::default();
            let mut x_hat = Vec::new();
            let mut u = Vec::new();
            while shared.steps_taken() < m {
                let j = shared.next_step();
                let i = stream.index(epoch, j as u64, n);
                let row = ds.row(i);
                x_hat.resize(row.len(), 0.0);
                shared.x.gather_into(row.indices, &mut x_hat);
                kernel.update(i, &x_hat, &mut u);
                for (&k, &uk) in row.indices.iter().zip(&u) {
                    shared.x.get(k).fetch_add(uk);
                }
                st.step(j, shared.steps_taken());
            }
            st
        });
        drop(kernel);
        x_tilde = shared.x.to_vec();
        per_epoch.push(ws.iterations);
        max_overlap = max_overlap.max(ws.max_overlap);
        calls += (n + ws.iterations) as u64;
        done = rec.record(s, calls, || obj.evaluate(ds, &x_tilde));
        s += 1;
    }

    Ok(RunOutput {
        x: x_tilde,
        traces: rec.finish(),
        diagnostics: Diagnostics {
            m,
            eta,
            theta: 1.0,
            zeta: Some(stats.zeta()),
            iterations_per_epoch: per_epoch,
            max_overlap: Some(max_overlap),
            ..Default::default()
        },
    })
}

/// ASAGA: asynchronous sparse SAGA with a scalar derivative table and a
/// shared running mean `ḡ` of the table gradients.
///
/// The step on the support of row `i` is
/// `(α_new - α_old) a_i + D_i (ḡ + λ x̂)`, after which `ḡ` absorbs
/// `(α_new - α_old) a_i / n`. An epoch is `m` steps (default `n`) with no
/// full-gradient pass.
pub fn asaga_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    let (n, d, stats) = check_sparse_run(obj, ds, cfg)?;
    let m = cfg.m.or(n);
    let eta = cfg.eta.or(1.0 / (5.0 * obj.smoothness()));
    let stream = cfg.stream();
    let loss = obj.loss();
    let lambda = obj.lambda();
    let inv_p = &stats.inv_p;
    let inv_n = 1.0 / n as f64;

    let x0 = cfg.initial_point(d)?;
    let shared = SharedIterate::new(&x0);
    let table = AtomicVec::zeros(n);
    let gbar = AtomicVec::zeros(d);
    let mut calls = 0u64;
    if cfg.saga_table == SagaTable::Initialized {
        let mut g = vec![0.0; d];
        for i in 0..n {
            let row = ds.row(i);
            let alpha = loss.derivative(row.dot(&x0), ds.label(i));
            table.get(i).store(alpha);
            for (&k, &v) in row.indices.iter().zip(row.values) {
                g[k] += alpha * v * inv_n;
            }
        }
        gbar.store_all(&g);
        calls += n as u64;
    }

    let mut per_epoch = Vec::new();
    let mut max_overlap = 0;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut x = x0;
    let mut done = rec.record(0, calls, || obj.evaluate(ds, &x));

    let mut s = 1;
    while s <= cfg.epochs && !done {
        shared.reset_counter();
        let epoch = s as u64;
        let ws = run_workers(cfg.threads, || {
            let mut st = WorkerStats::default();
            let mut x_hat = Vec::new();
            while shared.steps_taken() < m {
                let j = shared.next_step();
                let i = stream.index(epoch, j as u64, n);
                let row = ds.row(i);
                x_hat.resize(row.len(), 0.0);
                shared.x.gather_into(row.indices, &mut x_hat);
                let fresh = loss.derivative(row.dot_support(&x_hat), ds.label(i));
                let delta = fresh - table.get(i).swap(fresh);
                for ((&k, &v), &xk) in row.indices.iter().zip(row.values).zip(&x_hat) {
                    let est = delta * v + inv_p[k] * (gbar.get(k).load() + lambda * xk);
                    shared.x.get(k).fetch_add(-eta * est);
                    if delta != 0.0 {
                        gbar.get(k).fetch_add(delta * v * inv_n);
                    }
                }
                st.step(j, shared.steps_taken());
            }
            st
        });
        x = shared.x.to_vec();
        per_epoch.push(ws.iterations);
        max_overlap = max_overlap.max(ws.max_overlap);
        calls += ws.iterations as u64;
        done = rec.record(s, calls, || obj.evaluate(ds, &x));
        s += 1;
    }

    Ok(RunOutput {
        x,
        traces: rec.finish(),
        diagnostics: Diagnostics {
            m,
            eta,
            theta: 1.0,
            zeta: Some(stats.zeta()),
            iterations_per_epoch: per_epoch,
            max_overlap: Some(max_overlap),
            ..Default::default()
        },
    })
}
