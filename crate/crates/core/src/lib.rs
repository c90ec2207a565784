//! Solvers for quadratic programs with box constraints.
//!
//! `min ½xᵀHx + fᵀx` subject to `l ≤ x ≤ u`. Strictly convex problems go through an
//! accelerated projected gradient prediction followed by parametric active-set tracking.
//! Indefinite problems are wrapped in a proximal point loop, optionally with extrapolated
//! prox centers.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod apg;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod pas;
pub mod ppa;
pub mod problems;

pub use apg::{
    apg_solve, estimate_lipschitz, project_box, ApgParams, ApgStop, ApproxSolution, BqpProblem, ConvexityHint,
};
pub use error::{BqpError, Result};
pub use linalg::{sort_working_set, OrderedWorkingSet, SymMatrix, WorkingFactor};
pub use pas::{apg_pas_solve, filter_warm_start, kkt_residual, pas_solve, KktResidual, Partition, PasParams};
pub use ppa::{appa_solve, ppa_solve, PpaParams, SolverReport};
