//! Serial sparse MiG.
//!
//! The l2 term is folded into the components (`∇f_i(x) + λ D_i x`), the
//! snapshot gradient is reweighted by `D_i`, and every inner step reads and
//! writes only the support of the sampled row. The epoch average is kept
//! lazily: each coordinate remembers the step since which it has held its
//! current value and is credited for those steps when it next changes.

use crate::dataset::{FeatureStats, SparseDataset};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::SampleStream;

use super::params::{restart_period, sparse_variance_warning, theoretical_params_sc, SPARSE_OPTION_I_PRESET};
use super::{
    epoch_length_from_kappa, require_samples, AveragingOption, Diagnostics, Restart, RunOutput,
    Setting, SolverConfig, SparseSolverConfig, TraceRecorder,
};

/// Per-epoch constants of the sparse variance-reduced estimator.
pub(crate) struct SparseKernel<'a> {
    obj: &'a Objective,
    ds: &'a SparseDataset,
    inv_p: &'a [f64],
    mu: &'a [f64],
    x_tilde: &'a [f64],
    tilde_margins: Vec<f64>,
    theta: f64,
    eta: f64,
}

impl<'a> SparseKernel<'a> {
    pub(crate) fn new(
        obj: &'a Objective,
        ds: &'a SparseDataset,
        stats: &'a FeatureStats,
        mu: &'a [f64],
        x_tilde: &'a [f64],
        theta: f64,
        eta: f64,
    ) -> Self {
        let tilde_margins = (0..ds.n_samples()).map(|i| ds.row(i).dot(x_tilde)).collect();
        SparseKernel {
            obj,
            ds,
            inv_p: &stats.inv_p,
            mu,
            x_tilde,
            tilde_margins,
            theta,
            eta,
        }
    }

    /// Writes `u = -η ∇̃` on the support of row `i`, given the iterate's
    /// entries `x_hat` on that support. `∇̃` is evaluated at
    /// `y = θ x̂ + (1-θ) x̃`.
    #[inline]
    pub(crate) fn update(&self, i: usize, x_hat: &[f64], u: &mut Vec<f64>) {
        let row = self.ds.row(i);
        let b = self.ds.label(i);
        let loss = self.obj.loss();
        let lambda = self.obj.lambda();
        let theta = self.theta;
        let at = self.tilde_margins[i];
        let ay: f64 = row
            .indices
            .iter()
            .zip(row.values)
            .zip(x_hat)
            .map(|((&k, &v), &xk)| v * (theta * xk + (1.0 - theta) * self.x_tilde[k]))
            .sum();
        let coef = loss.derivative(ay, b) - loss.derivative(at, b);
        u.clear();
        u.extend(row.indices.iter().zip(row.values).zip(x_hat).map(|((&k, &v), &xk)| {
            let xt = self.x_tilde[k];
            let yk = theta * xk + (1.0 - theta) * xt;
            let est = coef * v + self.inv_p[k] * (lambda * (yk - xt) + self.mu[k]);
            -self.eta * est
        }));
    }
}

/// `∇f_i(y) - ∇f_i(x̃) + D_i μ` on the support of row `i`, where `f_i`
/// carries the folded l2 term. Expected over `i` this is `∇F(y) - ∇F(x̃) + μ`.
pub fn sparse_estimator(
    obj: &Objective,
    ds: &SparseDataset,
    stats: &FeatureStats,
    i: usize,
    y_support: &[f64],
    x_tilde_support: &[f64],
    mu: &[f64],
) -> Result<Vec<f64>> {
    let gy = obj.regularized_sparse_gradient(ds, stats, i, y_support)?;
    let gt = obj.regularized_sparse_gradient(ds, stats, i, x_tilde_support)?;
    let dmu = stats.reweight_on_support(ds.row(i), mu);
    Ok(gy
        .iter()
        .zip(&gt)
        .zip(&dmu)
        .map(|((a, b), c)| a - b + c)
        .collect())
}

/// Iterate and snapshot carried between sparse MiG epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMigState {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
}

/// Resolved per-epoch settings for [`sparse_mig_epoch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseEpochParams {
    pub m: usize,
    pub eta: f64,
    pub theta: f64,
    pub option: AveragingOption,
    /// 1-based epoch number, used to key the sample stream.
    pub epoch: usize,
    pub stream: SampleStream,
    pub threads: usize,
}

/// Number of integers in `[a, b] ∩ [lo, hi]`.
#[inline]
fn overlap(a: usize, b: isize, lo: usize, hi: usize) -> f64 {
    let start = a.max(lo) as isize;
    let end = b.min(hi as isize);
    if end >= start {
        (end - start + 1) as f64
    } else {
        0.0
    }
}

/// One epoch of serial sparse MiG.
///
/// Option I: `x̃_s = (θ/m) Σ_{j=0}^{m-1} x_j + (1-θ) x̃_{s-1}`, next epoch starts at `x̃_s`.
/// Option II: `x̃_s = (θ/m) Σ_{j=1}^{m} x_j + (1-θ) x̃_{s-1}`, next epoch starts at `x_m`.
pub fn sparse_mig_epoch(
    obj: &Objective,
    ds: &SparseDataset,
    stats: &FeatureStats,
    state: SparseMigState,
    params: &SparseEpochParams,
) -> Result<SparseMigState> {
    run_epoch(obj, ds, stats, state, params, |_, _, _| {})
}

/// [`sparse_mig_epoch`] with a callback `(step, sample, coordinate)` for every
/// coordinate written by the inner loop.
pub(crate) fn run_epoch(
    obj: &Objective,
    ds: &SparseDataset,
    stats: &FeatureStats,
    state: SparseMigState,
    params: &SparseEpochParams,
    mut on_write: impl FnMut(usize, usize, usize),
) -> Result<SparseMigState> {
    obj.require_foldable()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let m = params.m;
    if m == 0 {
        return Err(Error::config("m", "epoch length must be >= 1"));
    }
    let SparseMigState { mut x, x_tilde } = state;
    let d = x.len();

    let mu = obj.smooth_full_gradient(ds, &x_tilde, params.threads)?;
    let kernel = SparseKernel::new(obj, ds, stats, &mu, &x_tilde, params.theta, params.eta);

    let (lo, hi) = match params.option {
        AveragingOption::I => (0, m - 1),
        AveragingOption::II => (1, m),
    };
    let mut sum = vec![0.0; d];
    let mut held_since = vec![0usize; d];
    let mut x_hat = Vec::new();
    let mut u = Vec::new();

    for j in 1..=m {
        let i = params.stream.index(params.epoch as u64, j as u64, n);
        let row = ds.row(i);
        x_hat.clear();
        x_hat.extend(row.indices.iter().map(|&k| x[k]));
        kernel.update(i, &x_hat, &mut u);
        for (&k, &uk) in row.indices.iter().zip(&u) {
            sum[k] += x[k] * overlap(held_since[k], j as isize - 1, lo, hi);
            held_since[k] = j;
            x[k] += uk;
            on_write(j, i, k);
        }
    }
    for k in 0..d {
        sum[k] += x[k] * overlap(held_since[k], m as isize, lo, hi);
    }

    let scale = params.theta / m as f64;
    let new_tilde: Vec<f64> = sum
        .iter()
        .zip(&x_tilde)
        .map(|(s, t)| scale * s + (1.0 - params.theta) * t)
        .collect();
    if params.option == AveragingOption::I {
        x.copy_from_slice(&new_tilde);
    }
    Ok(SparseMigState { x, x_tilde: new_tilde })
}

/// Resolves `(m, η, θ)` for the sparse and asynchronous MiG variants.
///
/// Option I defaults to `preset = (m/κ, ηL, θ)`; option II to `m = 2n` with
/// the strongly convex theoretical `(η, θ)`.
pub(crate) fn resolve_sparse_params(
    obj: &Objective,
    n: usize,
    cfg: &SolverConfig,
    option: AveragingOption,
    preset: (f64, f64, f64),
) -> Result<(usize, f64, f64)> {
    let l = obj.smoothness();
    match option {
        AveragingOption::I => {
            let m = match cfg.m {
                Setting::Fixed(m) => m,
                Setting::Auto => epoch_length_from_kappa(preset.0, obj.condition_number())?,
            };
            Ok((m, cfg.eta.or(preset.1 / l), cfg.theta.or(preset.2)))
        }
        AveragingOption::II => {
            let m = cfg.m.or(2 * n);
            match (cfg.eta.fixed(), cfg.theta.fixed()) {
                (Some(eta), Some(theta)) => Ok((m, eta, theta)),
                (eta, theta) => {
                    let (ae, at) = theoretical_params_sc(l, obj.sigma(), m)?;
                    Ok((m, eta.unwrap_or(ae), theta.unwrap_or(at)))
                }
            }
        }
    }
}

/// Serial sparse MiG. Option I runs plain epochs; option II may restart every
/// `S` epochs from the mean of that block's snapshots.
pub fn sparse_mig_run(obj: &Objective, ds: &SparseDataset, cfg: &SparseSolverConfig) -> Result<RunOutput> {
    let base = &cfg.base;
    base.validate()?;
    obj.require_foldable()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let d = ds.n_features();
    let stats = ds.feature_stats();
    let (m, eta, theta) = resolve_sparse_params(obj, n, base, cfg.option, SPARSE_OPTION_I_PRESET)?;
    let zeta = stats.zeta();

    let period = match (cfg.option, cfg.restart) {
        (AveragingOption::I, _) | (_, Restart::Never) => None,
        (_, Restart::Every(0)) => return Err(Error::config("restart", "period must be >= 1")),
        (_, Restart::Every(k)) => Some(k),
        (_, Restart::Auto) => Some(restart_period(theta, zeta, eta, m, obj.sigma())?),
    };
    let kappa = obj.condition_number();
    let warning = if kappa.is_finite() {
        sparse_variance_warning(zeta, m, kappa)
    } else {
        None
    };

    let x0 = base.initial_point(d)?;
    let mut state = SparseMigState {
        x: x0.clone(),
        x_tilde: x0,
    };
    let mut block_sum = vec![0.0; d];
    let mut block_len = 0usize;
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(base.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &state.x_tilde));

    let mut s = 1;
    while s <= base.epochs && !done {
        let params = SparseEpochParams {
            m,
            eta,
            theta,
            option: cfg.option,
            epoch: s,
            stream: base.stream(),
            threads: base.threads,
        };
        state = sparse_mig_epoch(obj, ds, &stats, state, &params)?;
        calls += (n + m) as u64;
        if let Some(period) = period {
            for (b, t) in block_sum.iter_mut().zip(&state.x_tilde) {
                *b += t;
            }
            block_len += 1;
            if block_len == period {
                let restart: Vec<f64> = block_sum.iter().map(|b| b / period as f64).collect();
                state.x.copy_from_slice(&restart);
                state.x_tilde = restart;
                block_sum.iter_mut().for_each(|b| *b = 0.0);
                block_len = 0;
            }
        }
        done = rec.record(s, calls, || obj.evaluate(ds, &state.x_tilde));
        s += 1;
    }

    Ok(RunOutput {
        x: state.x_tilde,
        traces: rec.finish(),
        diagnostics: Diagnostics {
            m,
            eta,
            theta,
            zeta: Some(zeta),
            restart_period: period,
            sparse_variance_warning: warning,
            ..Default::default()
        },
    })
}

/// Serial sparse SVRG: the sparse estimator at `θ = 1`, snapshot taken at the
/// last iterate. This is the one-thread reference for KroMagnon.
pub fn sparse_svrg_run(obj: &Objective, ds: &SparseDataset, cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    obj.require_foldable()?;
    let n = ds.n_samples();
    require_samples(n)?;
    let d = ds.n_features();
    let stats = ds.feature_stats();
    let m = cfg.m.or(2 * n);
    let eta = cfg.eta.or(1.0 / (4.0 * obj.smoothness()));
    let stream = cfg.stream();

    let mut x = cfg.initial_point(d)?;
    let mut x_tilde = x.clone();
    let mut x_hat = Vec::new();
    let mut u = Vec::new();
    let mut calls = 0u64;
    let mut rec = TraceRecorder::new(cfg.stop);
    let mut done = rec.record(0, 0, || obj.evaluate(ds, &x_tilde));

    let mut s = 1;
    while s <= cfg.epochs && !done {
        let mu = obj.smooth_full_gradient(ds, &x_tilde, cfg.threads)?;
        let kernel = SparseKernel::new(obj, ds, &stats, &mu, &x_tilde, 1.0, eta);
        for j in 1..=m {
            let i = stream.index(s as u64, j as u64, n);
            let row = ds.row(i);
            x_hat.clear();
            x_hat.extend(row.indices.iter().map(|&k| x[k]));
            kernel.update(i, &x_hat, &mut u);
            for (&k, &uk) in row.indices.iter().zip(&u) {
                x[k] += uk;
            }
        }
        drop(kernel);
        calls += (n + m) as u64;
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
            zeta: Some(stats.zeta()),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_libsvm_str;
    use crate::objectives::{Loss, Regularizer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, d: usize, density: f64, seed: u64) -> SparseDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::new();
        for i in 0..n {
            text.push_str(if rng.random_bool(0.5) { "1" } else { "-1" });
            // coordinate i % d is always present so every column is used
            for k in 0..d {
                if k == i % d || rng.random_bool(density) {
                    text.push_str(&format!(" {}:{}", k + 1, rng.random_range(-1.0..1.0)));
                }
            }
            text.push('\n');
        }
        parse_libsvm_str(&text).unwrap().normalize_rows()
    }

    fn params(m: usize, option: AveragingOption, epoch: usize, seed: u64) -> SparseEpochParams {
        SparseEpochParams {
            m,
            eta: 0.7,
            theta: 0.4,
            option,
            epoch,
            stream: SampleStream::new(seed),
            threads: 1,
        }
    }

    /// Materialises every inner iterate and averages them directly.
    fn naive_epoch(
        obj: &Objective,
        ds: &SparseDataset,
        stats: &FeatureStats,
        state: &SparseMigState,
        p: &SparseEpochParams,
    ) -> SparseMigState {
        let n = ds.n_samples();
        let mu = obj.smooth_full_gradient(ds, &state.x_tilde, 1).unwrap();
        let mut iterates = vec![state.x.clone()];
        let mut x = state.x.clone();
        for j in 1..=p.m {
            let i = p.stream.index(p.epoch as u64, j as u64, n);
            let row = ds.row(i);
            let y: Vec<f64> = row
                .indices
                .iter()
                .map(|&k| p.theta * x[k] + (1.0 - p.theta) * state.x_tilde[k])
                .collect();
            let est = sparse_estimator(obj, ds, stats, i, &y, &row.gather(&state.x_tilde), &mu).unwrap();
            for (&k, e) in row.indices.iter().zip(est) {
                x[k] -= p.eta * e;
            }
            iterates.push(x.clone());
        }
        let range = match p.option {
            AveragingOption::I => 0..p.m,
            AveragingOption::II => 1..p.m + 1,
        };
        let d = x.len();
        let mut avg = vec![0.0; d];
        for it in &iterates[range] {
            for k in 0..d {
                avg[k] += it[k] / p.m as f64;
            }
        }
        let tilde: Vec<f64> = (0..d)
            .map(|k| p.theta * avg[k] + (1.0 - p.theta) * state.x_tilde[k])
            .collect();
        let next_x = match p.option {
            AveragingOption::I => tilde.clone(),
            AveragingOption::II => x,
        };
        SparseMigState { x: next_x, x_tilde: tilde }
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn lazy_average_matches_naive() {
        for seed in 0..20 {
            let ds = random_sparse(15, 9, 0.2, seed);
            let stats = ds.feature_stats();
            let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.05, &ds).unwrap();
            for option in [AveragingOption::I, AveragingOption::II] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let mut state = SparseMigState {
                    x: (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    x_tilde: (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
                };
                for epoch in 1..=3 {
                    let p = params(1 + (seed as usize * 7) % 40, option, epoch, seed);
                    let expected = naive_epoch(&obj, &ds, &stats, &state, &p);
                    state = sparse_mig_epoch(&obj, &ds, &stats, state, &p).unwrap();
                    assert_close(&state.x_tilde, &expected.x_tilde, 1e-12);
                    assert_close(&state.x, &expected.x, 1e-12);
                }
            }
        }
    }

    #[test]
    fn writes_stay_on_sampled_support() {
        let ds = random_sparse(30, 20, 0.1, 3);
        let stats = ds.feature_stats();
        let obj = Objective::new(Loss::Squared, Regularizer::L2, 0.01, &ds).unwrap();
        let state = SparseMigState {
            x: vec![0.1; 20],
            x_tilde: vec![0.0; 20],
        };
        let mut writes = Vec::new();
        run_epoch(&obj, &ds, &stats, state, &params(50, AveragingOption::II, 1, 8), |j, i, k| {
            writes.push((j, i, k))
        })
        .unwrap();
        assert!(!writes.is_empty());
        for (j, i, k) in writes {
            assert_eq!(i, SampleStream::new(8).index(1, j as u64, 30));
            assert!(ds.row(i).indices.contains(&k));
        }
    }

    #[test]
    fn single_step_option_one_mixes_start_point() {
        let ds = random_sparse(6, 4, 0.5, 11);
        let stats = ds.feature_stats();
        let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.1, &ds).unwrap();
        let state = SparseMigState {
            x: vec![0.5, -0.5, 1.0, 0.0],
            x_tilde: vec![0.25, 0.0, -1.0, 2.0],
        };
        let p = params(1, AveragingOption::I, 1, 2);
        let out = sparse_mig_epoch(&obj, &ds, &stats, state.clone(), &p).unwrap();
        for k in 0..4 {
            let expected = p.theta * state.x[k] + (1.0 - p.theta) * state.x_tilde[k];
            assert!((out.x_tilde[k] - expected).abs() < 1e-15);
        }
        assert_eq!(out.x, out.x_tilde);
    }

    #[test]
    fn l1_is_unsupported() {
        let ds = random_sparse(6, 4, 0.5, 1);
        let obj = Objective::new(Loss::Squared, Regularizer::L1, 0.1, &ds).unwrap();
        assert!(matches!(
            sparse_mig_run(&obj, &ds, &SparseSolverConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn restart_period_of_one_restarts_from_snapshot() {
        let ds = random_sparse(20, 6, 0.3, 5);
        let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.05, &ds).unwrap();
        let base = SolverConfig {
            m: Setting::Fixed(30),
            eta: Setting::Fixed(1.0),
            theta: Setting::Fixed(0.5),
            epochs: 4,
            seed: 3,
            ..Default::default()
        };
        let restarted = sparse_mig_run(
            &obj,
            &ds,
            &SparseSolverConfig {
                base: base.clone(),
                option: AveragingOption::II,
                restart: Restart::Every(1),
            },
        )
        .unwrap();
        // a block of one epoch restarts x and x̃ at x̃_s, i.e. option II with x_0^{s+1} = x̃_s
        let stats = ds.feature_stats();
        let mut state = SparseMigState {
            x: vec![0.0; 6],
            x_tilde: vec![0.0; 6],
        };
        for epoch in 1..=4 {
            let p = SparseEpochParams {
                m: 30,
                eta: 1.0,
                theta: 0.5,
                option: AveragingOption::II,
                epoch,
                stream: SampleStream::new(3),
                threads: 1,
            };
            state = sparse_mig_epoch(&obj, &ds, &stats, state, &p).unwrap();
            state.x = state.x_tilde.clone();
        }
        assert_eq!(restarted.x, state.x_tilde);
        assert_eq!(restarted.diagnostics.restart_period, Some(1));
    }

    #[test]
    fn auto_restart_reports_period_and_rejects_bad_variance() {
        let dense = random_sparse(20, 3, 1.0, 9);
        let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.05, &dense).unwrap();
        let cfg = SparseSolverConfig {
            base: SolverConfig {
                epochs: 2,
                ..Default::default()
            },
            option: AveragingOption::II,
            restart: Restart::Auto,
        };
        let out = sparse_mig_run(&obj, &dense, &cfg).unwrap();
        assert_eq!(out.diagnostics.zeta, Some(0.0));
        assert!(out.diagnostics.restart_period.unwrap() >= 1);

        let sparse = random_sparse(40, 30, 0.0, 9);
        let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.05, &sparse).unwrap();
        assert!(matches!(
            sparse_mig_run(&obj, &sparse, &cfg),
            Err(Error::Config { field: "restart", .. })
        ));
    }

    #[test]
    fn kernel_matches_estimator() {
        let ds = random_sparse(12, 7, 0.3, 21);
        let stats = ds.feature_stats();
        let obj = Objective::new(Loss::Logistic, Regularizer::L2, 0.2, &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = obj.smooth_full_gradient(&ds, &xt, 1).unwrap();
        let (theta, eta) = (0.3, 0.5);
        let kernel = SparseKernel::new(&obj, &ds, &stats, &mu, &xt, theta, eta);
        let mut u = Vec::new();
        for i in 0..12 {
            let row = ds.row(i);
            kernel.update(i, &row.gather(&x), &mut u);
            let y: Vec<f64> = row.indices.iter().map(|&k| theta * x[k] + (1.0 - theta) * xt[k]).collect();
            let est = sparse_estimator(&obj, &ds, &stats, i, &y, &row.gather(&xt), &mu).unwrap();
            for (uk, e) in u.iter().zip(est) {
                assert!((uk + eta * e).abs() < 1e-13);
            }
        }
    }
}
