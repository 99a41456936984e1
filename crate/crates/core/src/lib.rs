//! Likelihood-ratio tests for the β-model of undirected graphs and the
//! Bradley–Terry model of paired comparisons.
//!
//! The crate fits unrestricted and restricted maximum likelihood estimates,
//! forms `2 (l(full) - l(null))`, dispatches the reference distribution that
//! matches the null hypothesis and its dimension regime, and ships the
//! numerical checks used to calibrate those references: diagonal
//! approximations of inverse Fisher information, exact moment identities for
//! centred degree sums, and a reproducible Monte Carlo engine.

pub mod beta_model;
pub mod bt_model;
pub mod data;
pub mod error;
pub mod fisher_approx;
pub mod logistic;
pub mod lrt;
pub mod moments_oracle;
pub mod montecarlo;
pub mod rng;
mod solver;

pub use data::{
    degrees, load_comparisons, load_edge_list, ComparisonTable, Degrees, ModelKind, NullHypothesis, ParameterVector,
    UndirectedGraph,
};
pub use error::{Error, Result};
pub use solver::{Fit, FitOptions};
