//! Preconditioned conjugate gradients for SPD operators.

use super::{axpy, dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when the P-inner product of the residual collapses or turns
    /// nonpositive, which signals a non-SPD operator or preconditioner.
    pub breakdown: bool,
}

/// Solves A x = b with preconditioned conjugate gradients.
///
/// `apply_a` and `apply_pinv` write their result into the second argument.
/// Convergence is declared on the relative two-norm of the recurrence
/// residual, with the true residual recomputed every 50 iterations to guard
/// against drift. A zero right-hand side returns the zero vector
/// immediately.
pub fn pcg(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    apply_pinv: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, PcgReport) {
    let n = b.len();
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return (
            vec![0.0; n],
            PcgReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
                breakdown: false,
            },
        );
    }

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    let mut work = vec![0.0; n];
    apply_a(&x, &mut work);
    for i in 0..n {
        r[i] = b[i] - work[i];
    }
    let mut z = vec![0.0; n];
    apply_pinv(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / norm_b;

    if res <= tol {
        return (
            x,
            PcgReport {
                iterations: 0,
                relative_residual: res,
                converged: true,
                breakdown: false,
            },
        );
    }

    for iter in 1..=max_iter {
        apply_a(&p, &mut work);
        let pap = dot(&p, &work);
        if pap <= 0.0 || rz <= 0.0 {
            return (
                x,
                PcgReport {
                    iterations: iter - 1,
                    relative_residual: res,
                    converged: false,
                    breakdown: true,
                },
            );
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        if iter % 50 == 0 {
            // Recompute the true residual to stop recurrence drift.
            apply_a(&x, &mut work);
            for i in 0..n {
                r[i] = b[i] - work[i];
            }
        } else {
            axpy(-alpha, &work, &mut r);
        }
        res = norm2(&r) / norm_b;
        if res <= tol {
            return (
                x,
                PcgReport {
                    iterations: iter,
                    relative_residual: res,
                    converged: true,
                    breakdown: false,
                },
            );
        }
        apply_pinv(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    (
        x,
        PcgReport {
            iterations: max_iter,
            relative_residual: res,
            converged: false,
            breakdown: false,
        },
    )
}
