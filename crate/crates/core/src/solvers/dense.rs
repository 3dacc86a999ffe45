//! Dense-iterate solvers: MiG, MiG^NSC, SVRG (Prox-SVRG) and SAGA.
//!
//! MiG keeps a single iterate `x` plus the snapshot `x̃`. Gradients are taken
//! at the coupling point `y = θx + (1-θ)x̃`, which is never stored: for a GLM
//! only `<a_i, y> = θ<a_i, x> + (1-θ)<a_i, x̃>` is needed.

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::objectives::Objective;

use super::params::{nsc_schedule, theoretical_params_sc};
use super::{require_samples, Diagnostics, RunOutput, SagaTable, SolverConfig, TraceRecorder};

/// Running `(Σ w_j x_j, Σ w_j)` pair for the epoch average.
#[derive(Debug, Clone)]
pub struct WeightedAverage {
    sum: Vec<f64>,
    total_weight: f64,
}

impl WeightedAverage {
    pub fn new(d: usize) -> Self {
        WeightedAverage {
            sum: vec![0.0; d],
            total_weight: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.total_weight = 0.0;
    }

    #[inline]
    pub fn push(&mut self, x: &[f64], weight: f64) {
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += weight * v;
        }
        self.total_weight += weight;
    }

    /// `θ · (Σ w_j x_j / Σ w_j) + (1-θ) · prev`.
    pub fn couple(&self, theta: f64, prev: &[f64]) -> Vec<f64> {
        let scale = theta / self.total_weight;
        self.sum
            .iter()
            .zip(prev)
            .map(|(s, p)| scale * s + (1.0 - theta) * p)
            .collect()
    }
}

/// `x̃_s = θ (Σ_{j<m} ω^j)^{-1} Σ_{j<m} ω^j x_{j+1} + (1-θ) x̃_{s-1}`,
/// with `xs = [x_1, ..., x_m]`.
pub fn weighted_epoch_average(xs: &[Vec<f64>], x_prev: &[f64], theta: f64, omega: f64) -> Vec<f64> {
    assert!(!xs.is_empty(), "need at least one iterate");
    let mut avg = WeightedAverage::new(x_prev.len());
    let mut w = 1.0;
    for x in xs {
        avg.push(x, w);
        w *= omega;
    }
    avg.couple(theta, x_prev)
}

fn resolve_sc_params(obj: &Objective, m: usize, cfg: &SolverConfig) -> Result<(f64, f64)> {
    match (cfg.eta.fixed(), cfg.theta.fixed()) {
        (Some(eta), Some(theta)) => Ok((eta, theta)),
        (eta, theta) => {
            let (auto_eta, auto_theta) = theoretical_params_sc(obj.smoothness(), obj.sigma(), m)?;
            Ok((eta.unwrap_or(auto_eta), theta.unwrap_or(auto_theta)))
        }
    }
}

/// One MiG inner step: gradient at the coupling point, proximal update of `x`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn coupled_prox_step(
    obj: &Objective,
    ds: &SparseDataset,
    i: usize,
    theta: f64,
    eta: f64,
    x: &mut [f64],
    x_tilde: &[f64],
    mu: &[f64],
    grad: &mut [f64],
) {
    let row = ds.row(i);
    let b = ds.label(i);
    let loss = obj.loss();
    let at = row.dot(x_tilde);
    let ay = theta * row.dot(x) + (1.0 - theta) * at;
    let coef = loss.derivative(ay, b) - loss.derivative(at, b);
    grad.copy_from_slice(mu);
    for (&k, &v) in row.indices.iter().zip(row.values) {
        grad[k] += coef * v;
    }
    obj.prox_step_in_place(eta, x, grad);
}

/// MiG for `σ > 0`: coupled stochastic proximal steps, ω-weighted epoch
/// average with `ω = 1 + ησ`, and the last iterate carried into the next
/// epoch. Returns the final snapshot `x̃_S`.
pub fn mig_sc_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n = ds.n_samples();
    require_samples(n)?;
    if obj.sigma() <= 0.0 {
        return Err(Error::config(
            "reg",
            "MiG needs a strongly convex regularizer (l2 with lambda > 0); use mig-nsc",
        ));
    }
    let d = ds.n_features();
    let m = cfg.m.or(2 * n);
    let (eta, theta) = resolve_sc_params(obj, m, cfg)?;
    let omega = 1.0 + eta * obj.sigma();
    let stream = cfg.stream();

    let mut x = cfg.initial_point(d)?;
    let mut x_tilde = x.clone();
    let mut grad = vec![0.0; d];
    let mut avg = WeightedAverage::new(d);
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));

    let mut s = 1;
    while s <= cfg.epochs && !done {
        let mu = obj.full_gradient_par(ds, &x_tilde, cfg.threads);
        calls += n as u64;
        avg.reset();
        let mut weight = 1.0;
        for j in 1..=m {
            let i = stream.index(s as u64, j as u64, n);
            coupled_prox_step(obj, ds, i, theta, eta, &mut x, &x_tilde, &mu, &mut grad);
            avg.push(&x, weight);
            weight *= omega;
        }
        calls += m as u64;
        x_tilde = avg.couple(theta, &x_tilde);
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
            ..Default::default()
        },
    })
}

/// MiG^NSC: per-epoch `θ_s = 2/(s+4)`, `η_s = 1/(4Lθ_s)` (fixed values in the
/// config override the schedule), uniform epoch average over `x_1..x_m`.
pub fn mig_nsc_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let d = ds.n_features();
    let m = cfg.m.or(2 * n);
    let stream = cfg.stream();

    let mut x = cfg.initial_point(d)?;
    let mut x_tilde = x.clone();
    let mut grad = vec![0.0; d];
    let mut avg = WeightedAverage::new(d);
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));
    let (mut eta, mut theta) = (0.0, 0.0);

    let mut s = 1;
    while s <= cfg.epochs && !done {
        let (auto_eta, auto_theta) = nsc_schedule(obj.smoothness(), s);
        eta = cfg.eta.or(auto_eta);
        theta = cfg.theta.or(auto_theta);
        let mu = obj.full_gradient_par(ds, &x_tilde, cfg.threads);
        calls += n as u64;
        avg.reset();
        for j in 1..=m {
            let i = stream.index(s as u64, j as u64, n);
            coupled_prox_step(obj, ds, i, theta, eta, &mut x, &x_tilde, &mu, &mut grad);
            avg.push(&x, 1.0);
        }
        calls += m as u64;
        x_tilde = avg.couple(theta, &x_tilde);
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
            ..Default::default()
        },
    })
}

/// SVRG with a proximal step (Prox-SVRG for non-smooth `g`). The snapshot is
/// the last iterate of the previous epoch; default `η = 1/(4L)`.
pub fn svrg_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let d = ds.n_features();
    let m = cfg.m.or(2 * n);
    let eta = cfg.eta.or(1.0 / (4.0 * obj.smoothness()));
    let stream = cfg.stream();

    let mut x = cfg.initial_point(d)?;
    let mut x_tilde = x.clone();
    let mut grad = vec![0.0; d];
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));

    let mut s = 1;
    while s <= cfg.epochs && !done {
        let mu = obj.full_gradient_par(ds, &x_tilde, cfg.threads);
        calls += n as u64;
        for j in 1..=m {
            let i = stream.index(s as u64, j as u64, n);
            coupled_prox_step(obj, ds, i, 1.0, eta, &mut x, &x_tilde, &mu, &mut grad);
        }
        calls += m as u64;
        x_tilde.copy_from_slice(&x);
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
            ..Default::default()
        },
    })
}

/// SAGA with a scalar-per-sample table (`∇f_i = α_i a_i`) and a proximal
/// step after the table-corrected gradient; default `η = 1/(2(σn + L))`.
/// An epoch is `m` steps.
pub fn saga_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let d = ds.n_features();
    let m = cfg.m.or(2 * n);
    let eta = cfg
        .eta
        .or(1.0 / (2.0 * (obj.sigma() * n as f64 + obj.smoothness())));
    let stream = cfg.stream();
    let inv_n = 1.0 / n as f64;

    let mut x = cfg.initial_point(d)?;
    let mut grad = vec![0.0; d];
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x));

    let mut table = vec![0.0; n];
    let mut table_avg = vec![0.0; d];
    if cfg.saga_table == SagaTable::Initialized {
        for (i, alpha) in table.iter_mut().enumerate() {
            *alpha = obj.sample_derivative(ds, i, &x);
            let row = ds.row(i);
            for (&k, &v) in row.indices.iter().zip(row.values) {
                table_avg[k] += *alpha * v * inv_n;
            }
        }
        calls += n as u64;
    }

    let mut s = 1;
    while s <= cfg.epochs && !done {
        for j in 1..=m {
            let i = stream.index(s as u64, j as u64, n);
            let row = ds.row(i);
            let fresh = obj.sample_derivative(ds, i, &x);
            let delta = fresh - table[i];
            grad.copy_from_slice(&table_avg);
            for (&k, &v) in row.indices.iter().zip(row.values) {
                grad[k] += delta * v;
                table_avg[k] += delta * v * inv_n;
            }
            table[i] = fresh;
            obj.prox_step_in_place(eta, &mut x, &grad);
        }
        calls += m as u64;
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
            ..Default::default()
        },
    })
}
