//! Solver for stochastic mass transport with controlled drift and free end time.
//!
//! Given a source distribution μ, a target ν, and a running-cost Lagrangian
//! L(t,x,u), the solver computes the optimal transport value together with the
//! dual potentials (ψ, J), the optimal drift field, and the stopping barrier,
//! all on a space-time lattice. The pieces:
//!
//! - [`model`]: Lagrangian families, their convex conjugates, grid measures.
//! - [`lattice`]: space-time grid and the controlled Markov-chain kernel
//!   approximating the generator ½Δ + u·∇.
//! - [`hjb`]: backward obstacle (quasi-variational inequality) solve for J and
//!   the stop/continue policy; potential normalization and diagnostics.
//! - [`transport`]: forward Fokker-Planck propagation with stopping, the
//!   occupation measure, the stopping distribution, and the primal cost.
//! - [`dualsolve`]: outer subgradient ascent over ψ enforcing the target
//!   marginal; duality-gap reporting.
//! - [`oracle`]: ground-truth solvers for micro instances (exact LP over
//!   occupation measures, brute-force policy enumeration).
//! - [`montecarlo`]: Euler-Maruyama simulation of the controlled SDE stopped
//!   at the barrier, with statistical verification.
//! - [`config`] / [`cli`]: configuration parsing, measure I/O, command suite.

pub mod cli;
pub mod config;
pub mod dualsolve;
pub mod hjb;
pub mod lattice;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod transport;

use thiserror::Error;

/// Errors across the solver pipeline.
///
/// The CLI maps these onto exit codes: configuration/structural/domain
/// problems exit 1, numerical non-convergence exits 2, and LP infeasibility
/// certificates exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    /// Mismatched lattice/kernel/field shapes between pipeline stages.
    #[error("structural error: {0}")]
    Structural(String),
    /// Inputs outside the admissible domain (control outside U, NaN, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    /// The target marginal cannot be reached; carries a certificate summary.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Spatial points and drift vectors, padded with zeros beyond the active
/// dimension (d ≤ 3). Padding entries stay exactly 0.0 so Euclidean norms are
/// unaffected.
pub type Vec3 = [f64; 3];

pub(crate) fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
