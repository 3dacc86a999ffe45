//! Everything around the solvers that an experiment needs: synthetic data,
//! the `F*` reference oracle and its cache, solver dispatch, CSV traces and
//! the speedup benchmark.

pub mod experiment;
pub mod reference;
pub mod synthetic;

pub use experiment::{
    benchmark_spec, read_trace_csv, resolve_reference, run_experiment, run_solver, speedup_bench, write_trace_csv,
    DataSource, ExperimentResult, ExperimentSpec, SolverId, SpeedupRow, SPEEDUP_THRESHOLD, TRACE_HEADER,
};
pub use reference::{
    problem_key, reference_optimum, reference_optimum_with, OptimumCache, ReferenceOptimum, ReferenceOptions,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, Task};
