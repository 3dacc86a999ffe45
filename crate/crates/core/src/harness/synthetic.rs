//! Seeded synthetic sparse datasets.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{SparseDataset, SparseMatrix};
use crate::error::{Error, Result};

/// What the labels encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    /// `b_i = sign(<a_i, w> + noise · ε_i)` with `sign(0) = +1`.
    #[default]
    Classification,
    /// `b_i = <a_i, w> + noise · ε_i`.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Nonzeros per row.
    pub nnz: usize,
    pub noise: f64,
    pub seed: u64,
    pub task: Task,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, nnz: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d,
            nnz,
            noise,
            seed,
            task: Task::Classification,
        }
    }

    pub fn regression(self) -> Self {
        SyntheticSpec {
            task: Task::Regression,
            ..self
        }
    }
}

/// Rows with exactly `nnz` distinct, uniformly chosen coordinates holding
/// standard normal values, scaled to unit norm; labels from a hidden unit
/// vector `w`. The output depends only on `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SparseDataset> {
    let SyntheticSpec { n, d, nnz, noise, seed, task } = *spec;
    if nnz == 0 || nnz > d {
        return Err(Error::config("nnz", format!("need 1 <= nnz <= d, got nnz = {nnz}, d = {d}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config("noise", format!("must be finite and >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= w_norm);

    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * nnz);
    let mut vals = Vec::with_capacity(n * nnz);
    let mut labels = Vec::with_capacity(n);
    offsets.push(0);
    for _ in 0..n {
        let mut idx = index::sample(&mut rng, d, nnz).into_vec();
        idx.sort_unstable();
        let mut row: Vec<f64> = (0..nnz).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        let z = idx.iter().zip(&row).map(|(&k, v)| w[k] * v).sum::<f64>() + noise * eps;
        labels.push(match task {
            Task::Classification if z >= 0.0 => 1.0,
            Task::Classification => -1.0,
            Task::Regression => z,
        });
        cols.extend(idx);
        vals.extend(row);
        offsets.push(cols.len());
    }
    let matrix = SparseMatrix::new(offsets, cols, vals, d)?;
    Ok(SparseDataset::new(matrix, labels)?.normalize_rows())
}
