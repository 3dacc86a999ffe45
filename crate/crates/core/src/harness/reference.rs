//! Reference optimum `F*` and its on-disk cache.
//!
//! `F*` comes from a deterministic accelerated proximal gradient method
//! (FISTA with gradient-based adaptive restart) run until the gradient
//! mapping `L (x - prox_{g/L}(x - ∇f(x)/L))` has norm at most `1e-12`, or
//! until an iteration cap, in which case the result is flagged as not
//! certified.
//!
//! # Cache format
//!
//! A UTF-8 text file. Lines starting with `#` and blank lines are ignored.
//! Every other line is one record of six space-separated fields:
//!
//! ```text
//! <key> <fstar> <certified> <iterations> <grad_map_norm> <x>
//! ```
//!
//! `key` is the 64-character hex SHA-256 of the dataset and objective (see
//! [`problem_key`]), `certified` is `0` or `1`, and `x` is the minimiser as
//! comma-separated values (`-` when empty). Floats are written in Rust's
//! shortest round-trip form, so a cache hit reproduces `F*` bit for bit.
//! Later records for the same key replace earlier ones.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::objectives::{Loss, Objective, Regularizer};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub key: String,
    /// `F(x)` evaluated at `x`, so `F(x) - F* = 0` exactly.
    pub fstar: f64,
    pub x: Vec<f64>,
    /// Whether the gradient-mapping tolerance was met before the cap.
    pub certified: bool,
    pub iterations: usize,
    pub gradient_mapping_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Workers for the full-gradient reductions.
    pub threads: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            threads: 1,
        }
    }
}

/// Hex SHA-256 over the dataset content and the objective definition.
pub fn problem_key(obj: &Objective, ds: &SparseDataset) -> String {
    let mut h = Sha256::new();
    let m = ds.matrix();
    h.update(b"mig-reference-v1");
    h.update((m.n_rows() as u64).to_le_bytes());
    h.update((m.n_cols() as u64).to_le_bytes());
    for &o in m.row_offsets() {
        h.update((o as u64).to_le_bytes());
    }
    for &c in m.col_indices() {
        h.update((c as u64).to_le_bytes());
    }
    for &v in m.values().iter().chain(ds.labels()) {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update([
        match obj.loss() {
            Loss::Logistic => 0u8,
            Loss::Squared => 1,
        },
        match obj.regularizer() {
            Regularizer::L2 => 0u8,
            Regularizer::L1 => 1,
            Regularizer::None => 2,
        },
    ]);
    h.update(obj.lambda().to_bits().to_le_bytes());
    h.update(obj.smoothness().to_bits().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Computes `F*` with the default options.
pub fn reference_optimum(obj: &Objective, ds: &SparseDataset) -> Result<ReferenceOptimum> {
    reference_optimum_with(obj, ds, &ReferenceOptions::default())
}

pub fn reference_optimum_with(
    obj: &Objective,
    ds: &SparseDataset,
    opts: &ReferenceOptions,
) -> Result<ReferenceOptimum> {
    if ds.n_samples() == 0 {
        return Err(Error::config("data", "dataset has no samples"));
    }
    if opts.threads == 0 {
        return Err(Error::config("threads", "must be >= 1"));
    }
    let d = ds.n_features();
    let l = obj.smoothness();
    let eta = 1.0 / l;

    let mut x = vec![0.0; d];
    let mut y = x.clone();
    let mut next = vec![0.0; d];
    let mut t = 1.0f64;
    let mut gmap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let g = obj.full_gradient_par(ds, &y, opts.threads);
        next.copy_from_slice(&y);
        obj.prox_step_in_place(eta, &mut next, &g);
        gmap = l * y.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        // restart the momentum when it points uphill
        let uphill: f64 = y
            .iter()
            .zip(&next)
            .zip(&x)
            .map(|((yk, nk), xk)| (yk - nk) * (nk - xk))
            .sum();
        if gmap <= opts.tolerance {
            x.copy_from_slice(&next);
            break;
        }
        if uphill > 0.0 {
            t = 1.0;
            y.copy_from_slice(&next);
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for k in 0..d {
                y[k] = next[k] + beta * (next[k] - x[k]);
            }
            t = t_next;
        }
        x.copy_from_slice(&next);
    }
    let certified = gmap <= opts.tolerance;
    Ok(ReferenceOptimum {
        key: problem_key(obj, ds),
        fstar: obj.evaluate(ds, &x),
        x,
        certified,
        iterations,
        gradient_mapping_norm: gmap,
    })
}

/// Key-to-record store backed by a text file (format in the module docs).
#[derive(Debug, Clone)]
pub struct OptimumCache {
    path: PathBuf,
    records: BTreeMap<String, ReferenceOptimum>,
}

impl OptimumCache {
    /// Opens the cache at `path`; a missing file is an empty cache.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (no, line) in reader.lines().enumerate() {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let rec = parse_record(trimmed).map_err(|message| Error::Parse { line: no + 1, message })?;
                records.insert(rec.key.clone(), rec);
            }
        }
        Ok(OptimumCache { path, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&ReferenceOptimum> {
        self.records.get(key)
    }

    pub fn insert(&mut self, rec: ReferenceOptimum) {
        self.records.insert(rec.key.clone(), rec);
    }

    pub fn save(&self) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut out = std::io::BufWriter::new(fs::File::create(&self.path)?);
        writeln!(out, "# mig reference optimum cache v1")?;
        writeln!(out, "# key fstar certified iterations grad_map_norm x")?;
        for rec in self.records.values() {
            writeln!(out, "{}", format_record(rec))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Returns the cached optimum for this problem, computing and persisting
    /// it on a miss.
    pub fn get_or_compute(
        &mut self,
        obj: &Objective,
        ds: &SparseDataset,
        opts: &ReferenceOptions,
    ) -> Result<ReferenceOptimum> {
        let key = problem_key(obj, ds);
        if let Some(rec) = self.records.get(&key) {
            return Ok(rec.clone());
        }
        let rec = reference_optimum_with(obj, ds, opts)?;
        self.insert(rec.clone());
        self.save()?;
        Ok(rec)
    }
}

fn format_record(rec: &ReferenceOptimum) -> String {
    let x = if rec.x.is_empty() {
        "-".to_string()
    } else {
        rec.x.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    };
    format!(
        "{} {} {} {} {} {}",
        rec.key,
        rec.fstar,
        u8::from(rec.certified),
        rec.iterations,
        rec.gradient_mapping_norm,
        x
    )
}

fn parse_record(line: &str) -> std::result::Result<ReferenceOptimum, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [key, fstar, certified, iterations, gmap, x] = fields[..] else {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    };
    if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(format!("bad key {key:?}"));
    }
    let float = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
    let certified = match certified {
        "0" => false,
        "1" => true,
        other => return Err(format!("certified flag must be 0 or 1, got {other:?}")),
    };
    let x = if x == "-" {
        Vec::new()
    } else {
        x.split(',').map(float).collect::<std::result::Result<_, _>>()?
    };
    Ok(ReferenceOptimum {
        key: key.to_string(),
        fstar: float(fstar)?,
        x,
        certified,
        iterations: iterations.parse().map_err(|e| format!("bad iteration count: {e}"))?,
        gradient_mapping_norm: float(gmap)?,
    })
}
