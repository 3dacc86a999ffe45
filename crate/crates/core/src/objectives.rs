//! Losses, regularizers and their gradients / proximal steps.
//!
//! Every loss here is a generalised linear model: `f_i(x) = φ_i(<a_i, x>)`,
//! so a component gradient is the scalar `φ_i'(<a_i, x>)` times the sparse
//! row `a_i`. Solvers work with that scalar directly; the vector-valued
//! functions below exist for callers that want the gradient itself.
//!
//! * logistic: `φ_i(z) = log(1 + exp(-b_i z))`
//! * squared:  `φ_i(z) = (z + b_i)^2`
//!
//! The regularizer `g` is `(λ/2)‖x‖²` (l2), `λ‖x‖₁` (l1) or absent.

use std::thread;

use crate::dataset::{FeatureStats, SparseDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regularizer {
    L2,
    L1,
    None,
}

/// Numerically stable `log(1 + exp(z))`.
#[inline]
pub fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    /// `φ(z)` for label `b`.
    #[inline]
    pub fn value(self, z: f64, b: f64) -> f64 {
        match self {
            Loss::Logistic => log1p_exp(-b * z),
            Loss::Squared => (z + b) * (z + b),
        }
    }

    /// `φ'(z)` for label `b`.
    #[inline]
    pub fn derivative(self, z: f64, b: f64) -> f64 {
        match self {
            Loss::Logistic => -b * sigmoid(-b * z),
            Loss::Squared => 2.0 * (z + b),
        }
    }

    /// Upper bound on `φ''`.
    pub fn curvature_bound(self) -> f64 {
        match self {
            Loss::Logistic => 0.25,
            Loss::Squared => 2.0,
        }
    }
}

/// Smoothness constant shared by every component: `φ''_max · max_i ‖a_i‖²`.
pub fn smoothness_constant(loss: Loss, ds: &SparseDataset) -> f64 {
    let max_norm_sq = ds
        .matrix()
        .rows()
        .map(|r| r.norm_sq())
        .fold(0.0, f64::max);
    loss.curvature_bound() * max_norm_sq
}

/// A finite-sum objective `F(x) = (1/n) Σ φ_i(<a_i, x>) + g(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    loss: Loss,
    regularizer: Regularizer,
    lambda: f64,
    smoothness: f64,
    sigma: f64,
}

impl Objective {
    /// Builds an objective, deriving `L` from the data.
    pub fn new(loss: Loss, regularizer: Regularizer, lambda: f64, ds: &SparseDataset) -> Result<Self> {
        Self::with_smoothness(loss, regularizer, lambda, smoothness_constant(loss, ds))
    }

    /// Builds an objective with an explicit smoothness constant.
    pub fn with_smoothness(
        loss: Loss,
        regularizer: Regularizer,
        lambda: f64,
        smoothness: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        if !(smoothness > 0.0 && smoothness.is_finite()) {
            return Err(Error::config(
                "smoothness",
                format!("must be finite and > 0, got {smoothness} (all-zero data?)"),
            ));
        }
        let lambda = if regularizer == Regularizer::None { 0.0 } else { lambda };
        let sigma = match regularizer {
            Regularizer::L2 => lambda,
            Regularizer::L1 | Regularizer::None => 0.0,
        };
        Ok(Objective {
            loss,
            regularizer,
            lambda,
            smoothness,
            sigma,
        })
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `L`: smoothness of each component `f_i`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `σ`: strong convexity modulus, attributed to the l2 regularizer.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `κ = L/σ` (infinite when σ = 0).
    pub fn condition_number(&self) -> f64 {
        if self.sigma > 0.0 {
            self.smoothness / self.sigma
        } else {
            f64::INFINITY
        }
    }

    fn check_index(ds: &SparseDataset, i: usize) -> Result<()> {
        if i >= ds.n_samples() {
            return Err(Error::SampleOutOfRange {
                index: i,
                n_samples: ds.n_samples(),
            });
        }
        Ok(())
    }

    /// `φ_i'(<a_i, x>)` for a dense `x`.
    #[inline]
    pub fn sample_derivative(&self, ds: &SparseDataset, i: usize, x: &[f64]) -> f64 {
        self.loss.derivative(ds.row(i).dot(x), ds.label(i))
    }

    /// `f_i(x)` for a dense `x`.
    pub fn sample_loss(&self, ds: &SparseDataset, i: usize, x: &[f64]) -> Result<f64> {
        Self::check_index(ds, i)?;
        Ok(self.loss.value(ds.row(i).dot(x), ds.label(i)))
    }

    /// `∇f_i(x)` restricted to the support of row `i`.
    ///
    /// `x_support` holds the iterate's entries on that support, in order.
    pub fn sample_gradient(&self, ds: &SparseDataset, i: usize, x_support: &[f64]) -> Result<Vec<f64>> {
        Self::check_index(ds, i)?;
        let row = ds.row(i);
        if x_support.len() != row.len() {
            return Err(Error::config(
                "x_support",
                format!("expected {} entries, got {}", row.len(), x_support.len()),
            ));
        }
        let s = self.loss.derivative(row.dot_support(x_support), ds.label(i));
        Ok(row.values.iter().map(|v| s * v).collect())
    }

    /// `∇f_i(x) + λ D_i x` on the support of row `i`.
    ///
    /// Averaged over all rows this is `∇f(x) + λx` on used coordinates, so the
    /// l2 term can be folded into the components without densifying updates.
    pub fn regularized_sparse_gradient(
        &self,
        ds: &SparseDataset,
        stats: &FeatureStats,
        i: usize,
        x_support: &[f64],
    ) -> Result<Vec<f64>> {
        self.require_foldable()?;
        let mut g = self.sample_gradient(ds, i, x_support)?;
        if self.lambda > 0.0 {
            let row = ds.row(i);
            for ((gk, &k), &xk) in g.iter_mut().zip(row.indices).zip(x_support) {
                *gk += self.lambda * xk * stats.inv_p[k];
            }
        }
        Ok(g)
    }

    /// Errors unless the regularizer can be folded into the components.
    pub fn require_foldable(&self) -> Result<()> {
        if self.regularizer == Regularizer::L1 {
            return Err(Error::Unsupported(
                "the sparse estimators need a smooth objective; l1 has no sparse unbiased form".into(),
            ));
        }
        Ok(())
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn smooth_value(&self, ds: &SparseDataset, x: &[f64]) -> f64 {
        let n = ds.n_samples();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|i| self.loss.value(ds.row(i).dot(x), ds.label(i)))
            .sum();
        total / n as f64
    }

    /// `g(x)`.
    pub fn regularizer_value(&self, x: &[f64]) -> f64 {
        match self.regularizer {
            Regularizer::L2 => 0.5 * self.lambda * x.iter().map(|v| v * v).sum::<f64>(),
            Regularizer::L1 => self.lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::None => 0.0,
        }
    }

    /// `F(x) = f(x) + g(x)`.
    pub fn evaluate(&self, ds: &SparseDataset, x: &[f64]) -> f64 {
        self.smooth_value(ds, x) + self.regularizer_value(x)
    }

    /// `∇f(x)`; the regularizer is not included.
    pub fn full_gradient(&self, ds: &SparseDataset, x: &[f64]) -> Vec<f64> {
        self.full_gradient_par(ds, x, 1)
    }

    /// `∇f(x)` computed over `threads` contiguous row blocks whose partial sums
    /// are reduced in block order, so the result is reproducible for a given
    /// thread count.
    pub fn full_gradient_par(&self, ds: &SparseDataset, x: &[f64], threads: usize) -> Vec<f64> {
        let n = ds.n_samples();
        let d = ds.n_features();
        let mut out = vec![0.0; d];
        if n == 0 {
            return out;
        }
        let threads = threads.clamp(1, n);
        if threads == 1 {
            self.accumulate_gradient(ds, x, 0..n, &mut out);
        } else {
            let chunk = n.div_ceil(threads);
            let partials: Vec<Vec<f64>> = thread::scope(|scope| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let lo = (t * chunk).min(n);
                        let hi = ((t + 1) * chunk).min(n);
                        scope.spawn(move || {
                            let mut part = vec![0.0; d];
                            self.accumulate_gradient(ds, x, lo..hi, &mut part);
                            part
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
            });
            for part in partials {
                for (o, p) in out.iter_mut().zip(part) {
                    *o += p;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv_n);
        out
    }

    fn accumulate_gradient(
        &self,
        ds: &SparseDataset,
        x: &[f64],
        rows: std::ops::Range<usize>,
        out: &mut [f64],
    ) {
        for i in rows {
            let row = ds.row(i);
            let s = self.loss.derivative(row.dot(x), ds.label(i));
            for (&k, &v) in row.indices.iter().zip(row.values) {
                out[k] += s * v;
            }
        }
    }

    /// `∇f(x) + λx` for the l2 / none regularizers (`∇F` of the smooth form).
    pub fn smooth_full_gradient(&self, ds: &SparseDataset, x: &[f64], threads: usize) -> Result<Vec<f64>> {
        self.require_foldable()?;
        let mut g = self.full_gradient_par(ds, x, threads);
        if self.lambda > 0.0 {
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk += self.lambda * xk;
            }
        }
        Ok(g)
    }

    /// `argmin_x { ‖x - x_prev‖² / (2η) + <grad, x> + g(x) }`.
    pub fn prox_step(&self, eta: f64, x_prev: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut x = x_prev.to_vec();
        self.prox_step_in_place(eta, &mut x, grad);
        x
    }

    /// In-place variant of [`prox_step`](Self::prox_step): `x` holds `x_prev`
    /// on entry and the minimiser on return.
    #[inline]
    pub fn prox_step_in_place(&self, eta: f64, x: &mut [f64], grad: &[f64]) {
        debug_assert!(eta > 0.0);
        match self.regularizer {
            Regularizer::None => {
                for (xk, gk) in x.iter_mut().zip(grad) {
                    *xk -= eta * gk;
                }
            }
            Regularizer::L2 => {
                let shrink = 1.0 / (1.0 + eta * self.lambda);
                for (xk, gk) in x.iter_mut().zip(grad) {
                    *xk = (*xk - eta * gk) * shrink;
                }
            }
            Regularizer::L1 => {
                let level = eta * self.lambda;
                for (xk, gk) in x.iter_mut().zip(grad) {
                    *xk = soft_threshold(*xk - eta * gk, level);
                }
            }
        }
    }
}

/// `sign(v) · max(|v| - level, 0)`.
#[inline]
pub fn soft_threshold(v: f64, level: f64) -> f64 {
    if v > level {
        v - level
    } else if v < -level {
        v + level
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_libsvm_str;

    fn obj(loss: Loss, reg: Regularizer, lambda: f64) -> Objective {
        Objective::with_smoothness(loss, reg, lambda, 1.0).unwrap()
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let ds = parse_libsvm_str("1 1:0.6 3:0.8\n-1 2:1.0").unwrap();
        let o = obj(Loss::Logistic, Regularizer::None, 0.0);
        assert_eq!(o.sample_gradient(&ds, 0, &[0.0, 0.0]).unwrap(), vec![-0.3, -0.4]);
        assert_eq!(o.sample_gradient(&ds, 1, &[0.0]).unwrap(), vec![0.5]);
        let mu = o.full_gradient(&ds, &[0.0; 3]);
        assert_eq!(mu, vec![-0.15, 0.25, -0.2]);
    }

    #[test]
    fn squared_gradient_zero_residual() {
        let ds = parse_libsvm_str("-1 1:1").unwrap();
        let o = obj(Loss::Squared, Regularizer::None, 0.0);
        assert_eq!(o.sample_gradient(&ds, 0, &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_sample_full_gradient_matches_sample() {
        let ds = parse_libsvm_str("1 1:0.3 2:-0.5 4:2").unwrap();
        let o = obj(Loss::Logistic, Regularizer::None, 0.0);
        let x = [0.4, -1.0, 7.0, 0.25];
        let g = o.sample_gradient(&ds, 0, &ds.row(0).gather(&x)).unwrap();
        let full = o.full_gradient(&ds, &x);
        assert_eq!(full, vec![g[0], g[1], 0.0, g[2]]);
    }

    #[test]
    fn out_of_range_sample() {
        let ds = parse_libsvm_str("1 1:1").unwrap();
        let o = obj(Loss::Squared, Regularizer::None, 0.0);
        assert!(matches!(
            o.sample_gradient(&ds, 1, &[0.0]),
            Err(Error::SampleOutOfRange { index: 1, n_samples: 1 })
        ));
    }

    #[test]
    fn prox_examples() {
        let none = obj(Loss::Squared, Regularizer::None, 0.0);
        assert_eq!(none.prox_step(0.5, &[1.0, 1.0], &[1.0, 0.0]), vec![0.5, 1.0]);
        let l2 = obj(Loss::Squared, Regularizer::L2, 1.0);
        assert_eq!(l2.prox_step(1.0, &[2.0, 0.0], &[0.0, 0.0]), vec![1.0, 0.0]);
        let l1 = obj(Loss::Squared, Regularizer::L1, 0.3);
        let x = l1.prox_step(1.0, &[1.0, -0.2], &[0.0, 0.0]);
        assert!((x[0] - 0.7).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn zero_lambda_prox_is_plain_step() {
        let x = [0.3, -2.0, 5.0];
        let g = [1.0, -0.25, 0.5];
        let plain = obj(Loss::Squared, Regularizer::None, 0.0).prox_step(0.7, &x, &g);
        for reg in [Regularizer::L2, Regularizer::L1] {
            assert_eq!(obj(Loss::Squared, reg, 0.0).prox_step(0.7, &x, &g), plain);
        }
    }

    #[test]
    fn evaluate_at_zero() {
        let ds = parse_libsvm_str("1 1:0.6 3:0.8\n-1 2:1.0\n1 1:1").unwrap();
        let o = obj(Loss::Logistic, Regularizer::L2, 0.1);
        assert!((o.evaluate(&ds, &[0.0; 3]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_leaves_only_regularizer() {
        // (a·x + b)^2 = 0 for x = (1, 2)
        let ds = parse_libsvm_str("-1 1:1\n-2 2:1\n-3 1:1 2:1").unwrap();
        let x = [1.0, 2.0];
        let o = obj(Loss::Squared, Regularizer::L1, 0.5);
        assert_eq!(o.evaluate(&ds, &x), 1.5);
    }

    #[test]
    fn smoothness_constants() {
        let ds = parse_libsvm_str("1 1:3 2:4\n-1 2:1").unwrap();
        assert_eq!(smoothness_constant(Loss::Logistic, &ds), 25.0 / 4.0);
        assert_eq!(smoothness_constant(Loss::Squared, &ds), 50.0);
        let ds = ds.normalize_rows();
        assert!((smoothness_constant(Loss::Logistic, &ds) - 0.25).abs() < 1e-15);
        assert!((smoothness_constant(Loss::Squared, &ds) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_invariants() {
        let o = obj(Loss::Logistic, Regularizer::L1, 0.2);
        assert_eq!(o.sigma(), 0.0);
        let o = obj(Loss::Logistic, Regularizer::L2, 0.2);
        assert_eq!(o.sigma(), 0.2);
        assert_eq!(o.condition_number(), 5.0);
        assert!(Objective::with_smoothness(Loss::Logistic, Regularizer::L2, -1.0, 1.0).is_err());
        assert!(Objective::with_smoothness(Loss::Logistic, Regularizer::L2, 1.0, 0.0).is_err());
    }

    #[test]
    fn regularized_sparse_gradient_cases() {
        let dense = parse_libsvm_str("1 1:0.5 2:-1\n-1 1:2 2:0.25").unwrap();
        let st = dense.feature_stats();
        let x = [0.3, -0.7];
        let l2 = obj(Loss::Logistic, Regularizer::L2, 0.4);
        let plain = l2.sample_gradient(&dense, 1, &x).unwrap();
        let reg = l2.regularized_sparse_gradient(&dense, &st, 1, &x).unwrap();
        for k in 0..2 {
            assert!((reg[k] - (plain[k] + 0.4 * x[k])).abs() < 1e-15);
        }
        let zero = obj(Loss::Logistic, Regularizer::L2, 0.0);
        assert_eq!(zero.regularized_sparse_gradient(&dense, &st, 0, &x).unwrap(), zero.sample_gradient(&dense, 0, &x).unwrap());
        let l1 = obj(Loss::Logistic, Regularizer::L1, 0.4);
        assert!(matches!(
            l1.regularized_sparse_gradient(&dense, &st, 0, &x),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn parallel_gradient_close_to_serial() {
        let text: String = (0..37)
            .map(|i| format!("{} 1:{} 3:{}\n", if i % 3 == 0 { 1 } else { -1 }, 0.1 * i as f64, 1.0 / (i + 1) as f64))
            .collect();
        let ds = parse_libsvm_str(&text).unwrap();
        let o = obj(Loss::Logistic, Regularizer::None, 0.0);
        let x = [0.2, 0.0, -0.4];
        let serial = o.full_gradient(&ds, &x);
        for t in [2, 3, 8, 64] {
            let par = o.full_gradient_par(&ds, &x, t);
            assert_eq!(par, o.full_gradient_par(&ds, &x, t));
            for (a, b) in serial.iter().zip(&par) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn logistic_is_overflow_safe() {
        assert_eq!(Loss::Logistic.value(1e4, -1.0), 1e4);
        assert!(Loss::Logistic.value(1e4, 1.0) >= 0.0);
        assert!(Loss::Logistic.derivative(-1e4, 1.0).is_finite());
    }
}
