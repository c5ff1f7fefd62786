//! Spectral analysis of the scheme on the scalar modal problem: the
//! 3k x 3k amplification matrix G(Theta) advancing the scaled state,
//! its per-block 3x3 diagonal structure, bifurcation points where the
//! principal eigenvalue pair turns real, and numeric stability limits
//! with their closed-form counterparts.

use crate::error::{Error, Result};
use crate::integrator::{BlockParams, GenAlphaParams};
use crate::linalg::{block_triangular_eigenvalues, char_cubic, cubic_roots};
use nalgebra::{Complex, DMatrix, Matrix3};

/// Scan ceiling for Theta searches; no block limit of interest exceeds it.
pub const THETA_CEILING: f64 = 20.0;
/// Spectral-radius acceptance: the plateau sits at one up to roundoff.
pub const RHO_TOL: f64 = 1e-10;
/// Bisection width for bifurcation and stability searches.
pub const THETA_TOL: f64 = 1e-10;

/// G(Theta) with its defining pair A, B (A y_{n+1} = B y_n).
pub struct AmplificationMatrix {
    pub k: usize,
    pub theta: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl AmplificationMatrix {
    /// 3x3 diagonal block of G (block index 0-based).
    pub fn diagonal_block(&self, j: usize) -> Matrix3<f64> {
        let m0 = 3 * j;
        Matrix3::from_fn(|r, c| self.g[(m0 + r, m0 + c)])
    }

    /// Coupling block of G above the diagonal (row block i, column
    /// block j, i < j).
    pub fn coupling_block(&self, i: usize, j: usize) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.g[(3 * i + r, 3 * j + c)])
    }

    /// Eigenvalues, exactly the union of the diagonal blocks' spectra
    /// (G is upper block triangular).
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        let blocks: Vec<Matrix3<f64>> = (0..self.k).map(|j| self.diagonal_block(j)).collect();
        block_triangular_eigenvalues(&blocks)
    }

    pub fn rho(&self) -> f64 {
        self.spectrum()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

fn factorial(a: usize) -> f64 {
    (1..=a).map(|i| i as f64).product()
}

/// Builds A, B, and G = A^{-1} B. A is block diagonal and inverted
/// exactly blockwise; B follows the Taylor-chain update rows and the
/// block solve rows.
pub fn build_g(params: &GenAlphaParams, theta: f64) -> AmplificationMatrix {
    let k = params.k;
    let n = 3 * k;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, n);

    for j in 1..=k {
        let block = &params.blocks[j - 1];
        let m0 = 3 * (j - 1);
        let s = block.alpha_f;

        a[(m0, m0)] = 1.0;
        a[(m0, m0 + 2)] = -block.beta;
        a[(m0 + 1, m0 + 1)] = 1.0;
        a[(m0 + 1, m0 + 2)] = -block.gamma;
        a[(m0 + 2, m0 + 2)] = block.alpha;

        // Displacement row: full Taylor chain minus beta times the
        // chain of the block's solve variable.
        for m in [m0, m0 + 1] {
            for off in 0..(n - m) {
                b[(m, m + off)] += 1.0 / factorial(off);
            }
            let w = if m == m0 { block.beta } else { block.gamma };
            for off in 0..=(3 * (k - j)) {
                b[(m, m0 + 2 + off)] -= w / factorial(off);
            }
        }
        // Solve row: (alpha - 1) times the same chain, minus Theta times
        // the Taylor displacement predictor at alpha_f.
        let m = m0 + 2;
        for off in 0..=(3 * (k - j)) {
            b[(m, m + off)] += (block.alpha - 1.0) / factorial(off);
        }
        let q = if s == 0.0 {
            0
        } else {
            crate::integrator::predictor_order(k, j)
        };
        for off in 0..=q {
            let sa = if off == 0 { 1.0 } else { s.powi(off as i32) };
            b[(m, m0 + off)] -= theta * sa / factorial(off);
        }
    }

    // G = A^{-1} B with the exact blockwise inverse of A.
    let mut g = DMatrix::<f64>::zeros(n, n);
    for j in 0..k {
        let block = &params.blocks[j];
        let m0 = 3 * j;
        for c in 0..n {
            let (b0, b1, b2) = (b[(m0, c)], b[(m0 + 1, c)], b[(m0 + 2, c)]);
            g[(m0, c)] = b0 + block.beta / block.alpha * b2;
            g[(m0 + 1, c)] = b1 + block.gamma / block.alpha * b2;
            g[(m0 + 2, c)] = b2 / block.alpha;
        }
    }
    AmplificationMatrix {
        k,
        theta,
        a,
        b,
        g,
    }
}

/// Direct 3x3 diagonal block of G for one block's parameters.
pub fn lambda_block(block: &BlockParams, last: bool, theta: f64) -> Matrix3<f64> {
    let s = block.alpha_f;
    let (alpha, beta, gamma) = (block.alpha, block.beta, block.gamma);
    debug_assert_eq!(last, s == 0.0);
    let b0 = [1.0, 1.0, 0.5 - beta];
    let b1 = [0.0, 1.0, 1.0 - gamma];
    let b2 = [-theta, -theta * s, (alpha - 1.0) - theta * s * s / 2.0];
    Matrix3::from_fn(|r, c| match r {
        0 => b0[c] + beta / alpha * b2[c],
        1 => b1[c] + gamma / alpha * b2[c],
        _ => b2[c] / alpha,
    })
}

/// Characteristic cubic of one block, ascending coefficients
/// [c0, c1, c2, c3], scaled by 2 alpha.
pub fn characteristic_cubic(block: &BlockParams, last: bool, theta: f64) -> [f64; 4] {
    let (a, b, g) = (block.alpha, block.beta, block.gamma);
    if last {
        [
            theta * (2.0 * b + 1.0 - 2.0 * g) - 2.0 * a + 2.0,
            theta * (-4.0 * b + 2.0 * g + 1.0) + 6.0 * a - 4.0,
            2.0 * theta * b - 6.0 * a + 2.0,
            2.0 * a,
        ]
    } else {
        [
            2.0 * b * theta - 2.0 * a + 2.0,
            theta * (-4.0 * b - 2.0 * g + 1.0) + 6.0 * a - 4.0,
            theta * (2.0 * b + 2.0 * g + 1.0) - 6.0 * a + 2.0,
            2.0 * a,
        ]
    }
}

/// Eigenvalues of G(Theta) through the per-block route.
pub fn spectrum(params: &GenAlphaParams, theta: f64) -> Vec<Complex<f64>> {
    let blocks: Vec<Matrix3<f64>> = params
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| lambda_block(b, j + 1 == params.k, theta))
        .collect();
    block_triangular_eigenvalues(&blocks)
}

pub fn spectral_radius(params: &GenAlphaParams, theta: f64) -> f64 {
    spectrum(params, theta)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn block_rho(block: &BlockParams, last: bool, theta: f64) -> f64 {
    let m = lambda_block(block, last, theta);
    cubic_roots(char_cubic(&m))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Closed-form bifurcation point of one block.
pub fn closed_form_bifurcation(block: &BlockParams, last: bool) -> f64 {
    let (b, s) = (block.rho_b, block.rho_s);
    if last {
        2.0 + 2.0 * b + s - s * b * b
    } else {
        2.0 - 2.0 * b - s + s * b * b
    }
}

/// Closed-form stability limit of one block.
pub fn closed_form_stability(block: &BlockParams, last: bool) -> f64 {
    let (b, s) = (block.rho_b, block.rho_s);
    if last {
        4.0 * (1.0 + b) * (2.0 - b * s + s) * (3.0 - b + s - 3.0 * b * s)
            / (2.0 * (5.0 - b * b) + (5.0 - 13.0 * b - b * b + b * b * b) * s
                - (1.0 - b).powi(3) * s * s)
    } else {
        4.0 * (1.0 - b) * (2.0 - b * s - s) * (3.0 + b - s - 3.0 * b * s)
            / (2.0 * (5.0 - b * b) + (5.0 - 13.0 * b - b * b - b * b * b) * s
                - (1.0 + b).powi(3) * s * s)
    }
}

/// Numeric bifurcation point of block j (0-based): the Theta minimizing
/// the block's spectral radius. There the eigenvalues reach the
/// dissipation targets (a double real root at magnitude rho_b, joined
/// by the third at rho_s; a triple root when the targets coincide), and
/// the radius grows monotonically past it.
pub fn find_bifurcation(params: &GenAlphaParams, j: usize) -> Result<f64> {
    let block = &params.blocks[j];
    let last = j + 1 == params.k;
    let f = |theta: f64| block_rho(block, last, theta);

    let step = 0.01;
    let n = (THETA_CEILING / step) as usize;
    let mut best = (0usize, f(step));
    for i in 1..n {
        let v = f(step * (i + 1) as f64);
        if v < best.1 {
            best = (i, v);
        }
    }
    if best.0 + 1 >= n {
        return Err(Error::InvalidParameter {
            name: "theta".into(),
            reason: format!("no spectral-radius minimum below Theta = {THETA_CEILING} (block {j})"),
        });
    }
    let (mut a, mut b) = (step * best.0 as f64, step * (best.0 + 2) as f64);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > THETA_TOL {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    Ok(0.5 * (a + b))
}

/// Numeric and closed-form stability limits.
pub struct StabilityReport {
    /// min over blocks of the numeric limits; the scheme's Theta_max.
    pub theta_max: f64,
    pub per_block: Vec<f64>,
    pub closed_form: Vec<f64>,
}

/// Per-block bisection for the largest Theta with spectral radius at
/// most 1 + RHO_TOL; discrepancies beyond 1% against the closed forms
/// are logged, not fatal.
pub fn find_stability(params: &GenAlphaParams) -> StabilityReport {
    let step = 0.05;
    let mut per_block = Vec::with_capacity(params.k);
    let mut closed_form = Vec::with_capacity(params.k);
    for (j, block) in params.blocks.iter().enumerate() {
        let last = j + 1 == params.k;
        let over = |theta: f64| block_rho(block, last, theta) > 1.0 + RHO_TOL;
        let mut limit = THETA_CEILING;
        let mut t = step;
        while t <= THETA_CEILING {
            if over(t) {
                let (mut lo, mut hi) = (t - step, t);
                while hi - lo > THETA_TOL {
                    let mid = 0.5 * (lo + hi);
                    if over(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                limit = 0.5 * (lo + hi);
                break;
            }
            t += step;
        }
        if limit == THETA_CEILING {
            log::warn!("block {j}: no stability exit below Theta = {THETA_CEILING}");
        }
        let cf = closed_form_stability(block, last);
        if (limit - cf).abs() > 0.01 * cf.abs() {
            log::warn!(
                "block {j}: numeric stability limit {limit:.6} vs closed form {cf:.6} \
                 (discrepancy {:.2}%)",
                100.0 * (limit - cf).abs() / cf.abs()
            );
        }
        per_block.push(limit);
        closed_form.push(cf);
    }
    let theta_max = per_block.iter().cloned().fold(f64::MAX, f64::min);
    StabilityReport {
        theta_max,
        per_block,
        closed_form,
    }
}

/// One sweep sample: Theta, spectral radius, all eigenvalues.
pub struct SpectrumSample {
    pub theta: f64,
    pub rho: f64,
    pub eigenvalues: Vec<Complex<f64>>,
}

pub fn spectrum_sweep(params: &GenAlphaParams, thetas: &[f64]) -> Vec<SpectrumSample> {
    thetas
        .iter()
        .map(|&theta| {
            let eigenvalues = spectrum(params, theta);
            let rho = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
            SpectrumSample {
                theta,
                rho,
                eigenvalues,
            }
        })
        .collect()
}
