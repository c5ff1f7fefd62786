//! Small dense eigensolvers: cubic roots via companion matrices,
//! block-triangular spectra, and generalized power iteration.

use nalgebra::{Complex, DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Roots of c[0] + c[1] x + c[2] x^2 + c[3] x^3.
///
/// Uses the companion matrix and a QR eigensolver rather than closed-form
/// radicals; root coalescence (discriminant zero) then needs no branch
/// handling. Lower-degree polynomials (leading zeros) are solved directly.
pub fn cubic_roots(c: [f64; 4]) -> Vec<Complex<f64>> {
    if c[3] != 0.0 {
        let a = c[2] / c[3];
        let b = c[1] / c[3];
        let d = c[0] / c[3];
        let companion =
            Matrix3::new(0.0, 0.0, -d, 1.0, 0.0, -b, 0.0, 1.0, -a);
        companion.complex_eigenvalues().iter().cloned().collect()
    } else if c[2] != 0.0 {
        // Quadratic, stable form avoiding cancellation in one root.
        let a = c[2];
        let b = c[1];
        let d = c[0];
        let disc = b * b - 4.0 * a * d;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let r1 = if a != 0.0 { q / a } else { 0.0 };
            let r2 = if q != 0.0 { d / q } else { 0.0 };
            vec![Complex::new(r1, 0.0), Complex::new(r2, 0.0)]
        } else {
            let re = -b / (2.0 * a);
            let im = (-disc).sqrt() / (2.0 * a);
            vec![Complex::new(re, im), Complex::new(re, -im)]
        }
    } else if c[1] != 0.0 {
        vec![Complex::new(-c[0] / c[1], 0.0)]
    } else {
        Vec::new()
    }
}

/// Ascending characteristic-polynomial coefficients of a 3x3 block:
/// det(xI - A) = x^3 - tr x^2 + m2 x - det, returned as [c0, c1, c2, c3].
pub fn char_cubic(block: &Matrix3<f64>) -> [f64; 4] {
    let tr = block.trace();
    let m2 = block[(0, 0)] * block[(1, 1)] - block[(0, 1)] * block[(1, 0)]
        + block[(0, 0)] * block[(2, 2)] - block[(0, 2)] * block[(2, 0)]
        + block[(1, 1)] * block[(2, 2)] - block[(1, 2)] * block[(2, 1)];
    let det = block.determinant();
    [-det, m2, -tr, 1.0]
}

/// Eigenvalues of an upper-block-triangular matrix with 3x3 diagonal
/// blocks: the multiset union of the per-block spectra, each obtained from
/// its characteristic cubic through the companion solver.
pub fn block_triangular_eigenvalues(blocks: &[Matrix3<f64>]) -> Vec<Complex<f64>> {
    blocks
        .iter()
        .flat_map(|b| cubic_roots(char_cubic(b)))
        .collect()
}

/// Result of the generalized power iteration.
#[derive(Debug, Clone)]
pub struct PowerIterationResult {
    /// Final eigenvalue estimate.
    pub value: f64,
    /// False when the iteration hit its cap before the estimate settled.
    pub converged: bool,
    /// Rayleigh-quotient estimate after each iteration.
    pub history: Vec<f64>,
}

/// Largest eigenvalue of M^{-1} K for SPD M and symmetric PSD K.
///
/// Power iteration on M^{-1} K with Rayleigh quotients taken in the
/// K-inner product, where the operator is self-adjoint; the estimates are
/// then monotone nondecreasing. Only a K-product and an M-solve are needed.
pub fn power_iteration_genmax(
    apply_k: &dyn Fn(&[f64], &mut [f64]),
    solve_m: &dyn Fn(&[f64]) -> Vec<f64>,
    n: usize,
    rel_tol: f64,
    max_iter: usize,
    seed: u64,
) -> PowerIterationResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nx = super::norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);

    let mut kx = vec![0.0; n];
    let mut history = Vec::new();
    let mut value = 0.0;
    let mut converged = false;
    for _ in 0..max_iter {
        apply_k(&x, &mut kx);
        let xkx = super::dot(&x, &kx);
        if xkx <= 0.0 {
            // Start vector (numerically) in the kernel of K; reseed.
            x = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let nx = super::norm2(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            continue;
        }
        let y = solve_m(&kx);
        let estimate = super::dot(&kx, &y) / xkx;
        history.push(estimate);
        if (estimate - value).abs() <= rel_tol * estimate.abs() && !history.is_empty() && value != 0.0
        {
            value = estimate;
            converged = true;
            break;
        }
        value = estimate;
        let ny = super::norm2(&y);
        x = y;
        x.iter_mut().for_each(|v| *v /= ny);
    }
    PowerIterationResult {
        value,
        converged,
        history,
    }
}

/// Dense generalized maximum eigenvalue of (K, M) via the symmetric
/// reduction L^{-1} K L^{-T} with M = L L^T. Oracle-grade, O(n^3).
pub fn dense_generalized_eig_max(k: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let chol = m.clone().cholesky().expect("M must be SPD");
    let l = chol.l();
    let x = l
        .solve_lower_triangular(k)
        .expect("triangular solve failed");
    let a = l
        .solve_lower_triangular(&x.transpose())
        .expect("triangular solve failed");
    let sym = 0.5 * (&a + a.transpose());
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
}
