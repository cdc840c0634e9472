//! Cramér–von Mises type goodness-of-fit tests for ergodic diffusions
//! `dX = S(X − θ) dt + dW` whose drift is known up to a shift `θ`.
//!
//! The pieces, bottom up: a counter-based RNG ([`rng`]), the drift model
//! ([`model`]), its invariant law and kernels ([`law`]), Euler–Maruyama
//! paths ([`sim`]), shift estimators and density / distribution curves
//! ([`estimators`]), the test statistics ([`gof`]), Monte Carlo of the
//! limit laws and quantile tables ([`limit`]) and the size / power
//! experiments ([`study`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod estimators;
pub mod gof;
pub mod grid;
pub mod law;
pub mod limit;
pub mod model;
pub mod rng;
pub mod sim;
pub mod study;

pub use conditions::{check_conditions, ConditionReport, ProbeGrid, TailWitness};
pub use error::{Error, Result};
pub use estimators::{
    edf, kernel_density, lte_density, mde_shift, mle_shift, Bandwidth, CurveEstimate, CurveKind,
    EstimatorMethod, ShiftEstimate,
};
pub use gof::{
    compute_statistics, cvm_edf, cvm_kernel, cvm_lte, decide, ks_statistics, StatisticKind,
    TestReport,
};
pub use grid::UniformGrid;
pub use law::{InvariantLaw, TailRate};
pub use limit::{
    estimate_quantiles, simulate_limit, LimitGrid, LimitKind, LimitSampleBatch, LimitSimulator,
    QuantileTable,
};
pub use model::ShiftDriftModel;
pub use rng::CounterRng;
pub use sim::{simulate_path, InitRule, Noise, Path, TimeGrid};
pub use study::{run_power_study, run_size_study, ExperimentConfig, StudyReport};
