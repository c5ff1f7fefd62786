//! Sparse, banded, and Kronecker-structured linear algebra kernels.

pub mod banded;
pub mod eig;
pub mod kron;
pub mod pcg;
pub mod sparse;

pub use banded::{BandedCholesky, BandedSpd};
pub use eig::{block_triangular_eigenvalues, char_cubic, cubic_roots, power_iteration_genmax};
pub use kron::KroneckerOperator;
pub use pcg::{pcg, PcgReport};
pub use sparse::CsrMatrix;

/// Euclidean inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
