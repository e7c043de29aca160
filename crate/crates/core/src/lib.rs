//! A desk-scale laboratory for finite-dimensional Ornstein-Uhlenbeck
//! semigroups.
//!
//! The drift `A` and noise injection `i` of the linear SDE
//! `dU = AU dt + i dW` determine everything else: the invariant covariance
//! `Q_inf` (a Lyapunov solve), the transition semigroup `P(t)` acting on test
//! functions (Mehler form), the directional gradient `D_H = iᵀ∇`, its Gaussian
//! divergence, and the form operator `B` with `B + Bᵀ = -I`. On polynomial
//! test functions all Gaussian expectations are computed exactly by moment
//! recursion, so most identities become tight floating-point checks; smooth
//! functions go through seeded Monte Carlo, quasi Monte Carlo or Gauss-Hermite
//! quadrature.
//!
//! Module map:
//!
//! * [`numkit`]: dense kernels (`expm`, Lyapunov, PSD factorization, quadrature rules).
//! * [`model`]: [`ModelSpec`] and the derived static objects.
//! * [`poly`]: multivariate polynomials and exact Gaussian moments.
//! * [`calculus`]: test functions, `D_H`, its adjoint, the generator and the form identities.
//! * [`semigroup`]: `P(t)`, the tensor semigroup, chaos eigenfunctions, decay scans.
//! * [`inequality`]: `L^p` norms, Poincaré ratios, duality integral, gradient scans,
//!   the weighted-norm counterexample.
//! * [`sector`]: contour-integral resolvent of Kronecker sums of sectorial matrices.
//! * [`scenario`]: JSON scenarios, presets, reports.

pub mod calculus;
pub mod error;
pub mod inequality;
pub mod model;
pub mod numkit;
pub mod poly;
pub mod sampling;
pub mod scenario;
pub mod sector;
pub mod semigroup;

pub use calculus::{SmoothFunction, TestFunction, VectorTestFunction};
pub use error::{LabError, Result};
pub use model::{ConditionReport, DerivedModel, ModelFlags, ModelSpec};
pub use numkit::{Matrix, SpdFactor};
pub use poly::Polynomial;
pub use sampling::{Estimate, Evaluation, Scheme};
pub use sector::{SectorContour, SectorialMatrix};
pub use semigroup::{ChaosIndex, GaussianMeasure};

/// Version string embedded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
