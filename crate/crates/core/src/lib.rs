//! Accelerated stochastic variance-reduced solvers for finite-sum convex
//! problems `F(x) = (1/n) Σ f_i(x) + g(x)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`]: LibSVM ingestion, CSR storage and per-feature support
//!   statistics used by the sparse estimators.
//! * [`objectives`]: logistic / squared losses, l2 / l1 regularizers,
//!   gradients, proximal steps and smoothness constants.
//! * [`solvers`]: MiG (strongly convex and non-strongly convex), serial
//!   sparse MiG, lock-free asynchronous sparse MiG, and the SVRG, SAGA,
//!   KroMagnon and ASAGA baselines.
//! * [`harness`]: synthetic data, the reference optimum oracle, CSV traces
//!   and the speedup benchmark.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod rng;
pub mod solvers;

pub use dataset::{parse_libsvm, parse_libsvm_str, FeatureStats, Row, SparseDataset, SparseMatrix};
pub use error::{Error, Result};
pub use objectives::{Loss, Objective, Regularizer};
