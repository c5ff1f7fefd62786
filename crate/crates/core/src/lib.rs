//! Explicit generalized-alpha time integrators of order 2k coupled to a
//! tensor-product B-spline Galerkin discretization of the linear wave
//! equation, with Kronecker-structured mass preconditioning on single
//! patches and additive-Schwarz composition on multi-patch domains.
//!
//! The crate splits into:
//! - [`splines`], [`geometry`]: B-spline bases, patch parametrizations,
//!   conforming multi-patch glue.
//! - [`assembly`]: mass/stiffness/damping/load assembly and Dirichlet
//!   constraint handling, producing a [`assembly::SemiDiscreteSystem`].
//! - [`linalg`]: CSR kernels, banded Cholesky, Kronecker solves, PCG,
//!   power iteration, small dense eigensolvers.
//! - [`precond`]: the diagonally scaled Kronecker mass preconditioner and
//!   its additive-Schwarz multi-patch composition.
//! - [`integrator`]: parameter computation from dissipation controls and
//!   the 2k-order explicit stepping loop (k mass solves per step).
//! - [`spectral`]: amplification matrices, spectra, bifurcation and
//!   stability limits.
//! - [`manufactured`], [`studies`]: closed-form benchmark problems and the
//!   CSV-emitting study drivers behind the CLI.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod integrator;
pub mod linalg;
pub mod manufactured;
pub mod precond;
pub mod quadrature;
pub mod spectral;
pub mod splines;
pub mod studies;

pub use error::{Error, Result};
