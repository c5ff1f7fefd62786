//! Symmetric positive definite banded matrices and their Cholesky
//! factorization.
//!
//! Storage holds the lower band by rows: entry (i, j) with i-bw <= j <= i
//! lives at band[i * (bw+1) + (j - i + bw)]. Univariate spline mass and
//! stiffness matrices of degree p have bandwidth p, so factor and solve
//! cost O(n * bw^2) and O(n * bw).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    /// Builds from an entry accessor, keeping only the lower band.
    pub fn from_fn(n: usize, bw: usize, get: impl Fn(usize, usize) -> f64) -> Self {
        let mut band = vec![0.0; n * (bw + 1)];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band[i * (bw + 1) + (j + bw - i)] = get(i, j);
            }
        }
        BandedSpd { n, bw, band }
    }

    /// Extracts the band of a symmetric CSR matrix. Entries outside the band
    /// must be zero; this is checked and reported as an assembly error.
    pub fn from_csr(m: &super::CsrMatrix, bw: usize) -> Result<Self> {
        let n = m.nrows();
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if v != 0.0 && c.abs_diff(i) > bw {
                    return Err(Error::Assembly {
                        reason: format!("entry ({i}, {c}) = {v} outside bandwidth {bw}"),
                    });
                }
            }
        }
        Ok(Self::from_fn(n, bw, |i, j| m.get(i, j)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        if r - c > self.bw {
            0.0
        } else {
            self.band[r * (self.bw + 1) + (c + self.bw - r)]
        }
    }

    /// y = A x (symmetric product from the stored lower band).
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let v = self.band[i * (self.bw + 1) + (j + self.bw - i)];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += self.band[i * (self.bw + 1) + self.bw] * x[i];
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.band[i * (self.bw + 1) + self.bw])
            .collect()
    }

    /// In-band Cholesky A = L L^T. Fails with the offending row if a pivot
    /// is not strictly positive.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let mut l = self.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l[i * (bw + 1) + (j + bw - i)];
                let kmin = j.saturating_sub(bw).max(lo);
                for k in kmin..j {
                    sum -= l[i * (bw + 1) + (k + bw - i)] * l[j * (bw + 1) + (k + bw - j)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    l[i * (bw + 1) + bw] = sum.sqrt();
                } else {
                    l[i * (bw + 1) + (j + bw - i)] = sum / l[j * (bw + 1) + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Lower-banded Cholesky factor with forward/backward substitution.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves A x = b in place (b becomes x).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let bw = self.bw;
        // L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut sum = b[i];
            for j in lo..i {
                sum -= self.l[i * (bw + 1) + (j + bw - i)] * b[j];
            }
            b[i] = sum / self.l[i * (bw + 1) + bw];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut sum = b[i];
            for j in (i + 1)..=hi {
                sum -= self.l[j * (bw + 1) + (i + bw - j)] * b[j];
            }
            b[i] = sum / self.l[i * (bw + 1) + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
