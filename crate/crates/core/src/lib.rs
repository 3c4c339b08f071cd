//! Finite-horizon covariance steering of discrete-time Gaussian linear
//! systems with a squared 2-Wasserstein terminal cost.
//!
//! The control policy `u = u_ff + K (x − x̄)` is reparametrized through
//! `Θ = K (I − H_u K)⁻¹`, which turns the objective into
//!
//! ```text
//! J(u_ff, Θ) = J₁(u_ff) + J₂(Θ) + J₃(Θ) − J₄(Θ)
//! ```
//!
//! a difference of convex functions over the causal (block lower triangular)
//! subspace of `Θ`. This crate provides the lifted problem data, the exact
//! gradient and Hessian of `J`, a convexity certificate, a convex-concave
//! solver with optional guarded Newton refinement, and seeded Monte Carlo
//! validation of solved policies.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
#[macro_use]
extern crate std;

pub mod error;
pub mod matops;
pub mod objective;
pub mod problem;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use matops::SymmetricPd;
pub use objective::{Certificate, CertificateKind, CertificateMode, ObjectiveReport, Policy, Terms};
pub use problem::{BlockOperators, CausalityMask, Gaussian, SteeringProblem, TimeVaryingLinearSystem};
pub use simulate::RolloutReport;
pub use solver::{Solution, SolveTrace, SolverOptions, Termination};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Numerical tolerances shared across modules.
pub mod tol {
    /// Symmetry check: `‖S − Sᵀ‖_max ≤ SYMMETRY_REL · ‖S‖_max`.
    pub const SYMMETRY_REL: f64 = 1e-10;
    /// Eigenvalues in `[-EIG_CLAMP_REL·λ_max, 0)` are treated as zero.
    pub const EIG_CLAMP_REL: f64 = 1e-12;
    /// Reciprocal condition number below which inverses are refused.
    pub const RCOND_MIN: f64 = 1e-13;
    /// `G_k` is full rank when `σ_min > RANK_REL · σ_max`.
    pub const RANK_REL: f64 = 1e-10;
    /// Negative round-off of W₂² clamped to zero up to this (relative) size.
    pub const W2_CLAMP: f64 = 1e-10;
    /// Relative asymmetry allowed in the assembled Hessian before symmetrizing.
    pub const HESSIAN_ASYMMETRY_REL: f64 = 1e-8;
    /// Slack for the Löwner dominance test, relative to `‖S_d‖`.
    pub const DOMINANCE_REL: f64 = 1e-10;
}
