//! Kronecker products of banded SPD factors, applied and solved without
//! ever assembling the product matrix.
//!
//! Flat indices are co-lexicographic (first factor fastest): entry (I, J)
//! of the operator is the product over directions k of A_k[i_k, j_k].
//! Application and solve sweep one direction at a time over strided slices,
//! so the cost stays proportional to the operator dimension times the sum
//! of factor bandwidths.

use super::banded::{BandedCholesky, BandedSpd};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct KroneckerOperator {
    factors: Vec<BandedSpd>,
    cholesky: Vec<BandedCholesky>,
    dims: Vec<usize>,
}

impl KroneckerOperator {
    /// Factors in direction order (first = fastest-varying index).
    /// Each factor is Cholesky-factored once at construction.
    pub fn new(factors: Vec<BandedSpd>) -> Result<Self> {
        let cholesky = factors
            .iter()
            .map(|f| f.cholesky())
            .collect::<Result<Vec<_>>>()?;
        let dims = factors.iter().map(|f| f.n()).collect();
        Ok(KroneckerOperator {
            factors,
            cholesky,
            dims,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn factors(&self) -> &[BandedSpd] {
        &self.factors
    }

    /// Diagonal of the Kronecker product: products of factor diagonals.
    pub fn diagonal(&self) -> Vec<f64> {
        let per_dir: Vec<Vec<f64>> = self.factors.iter().map(|f| f.diagonal()).collect();
        let n = self.dim();
        let mut diag = Vec::with_capacity(n);
        for flat in 0..n {
            let mut rest = flat;
            let mut v = 1.0;
            for (k, &m) in self.dims.iter().enumerate() {
                v *= per_dir[k][rest % m];
                rest /= m;
            }
            diag.push(v);
        }
        diag
    }

    /// Sweeps `op` over direction k: for every line of the data along that
    /// direction, gather the strided slice, transform it, scatter it back.
    fn sweep(&self, k: usize, data: &mut [f64], mut op: impl FnMut(&mut [f64])) {
        let m = self.dims[k];
        let stride: usize = self.dims[..k].iter().product();
        let outer: usize = self.dims[k + 1..].iter().product();
        let mut line = vec![0.0; m];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * stride * m + s;
                for i in 0..m {
                    line[i] = data[base + i * stride];
                }
                op(&mut line);
                for i in 0..m {
                    data[base + i * stride] = line[i];
                }
            }
        }
    }

    /// y = (kron of factors) x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut data = x.to_vec();
        let mut buf = vec![0.0; *self.dims.iter().max().unwrap()];
        for k in 0..self.factors.len() {
            let factor = &self.factors[k];
            let m = self.dims[k];
            self.sweep(k, &mut data, |line| {
                factor.matvec(line, &mut buf[..m]);
                line.copy_from_slice(&buf[..m]);
            });
        }
        data
    }

    /// Solves (kron of factors) x = b by per-direction banded solves.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        let mut data = b.to_vec();
        for k in 0..self.factors.len() {
            let chol = &self.cholesky[k];
            self.sweep(k, &mut data, |line| chol.solve_in_place(line));
        }
        data
    }

    /// Dense assembly for oracle comparisons at small sizes.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let mut ri = i;
            let mut rj = j;
            let mut v = 1.0;
            for (k, &m) in self.dims.iter().enumerate() {
                v *= self.factors[k].get(ri % m, rj % m);
                ri /= m;
                rj /= m;
            }
            v
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, bw: usize, rng: &mut impl Rng) -> BandedSpd {
        let vals: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..=bw).map(|_| rng.gen::<f64>() - 0.5).collect())
            .collect();
        BandedSpd::from_fn(n, bw, |i, j| {
            if i == j {
                3.0 + 2.0 * bw as f64 + vals[i][0].abs()
            } else {
                vals[i][i - j]
            }
        })
    }

    #[test]
    fn identity_factors_act_as_identity() {
        let id = |n: usize| BandedSpd::from_fn(n, 0, |_, _| 1.0);
        let op = KroneckerOperator::new(vec![id(3), id(4)]).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(op.apply(&x), x);
        assert_eq!(op.solve(&x), x);
    }

    #[test]
    fn apply_matches_dense_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dims in [vec![3], vec![3, 4], vec![2, 3, 4]] {
            let factors: Vec<_> = dims.iter().map(|&n| spd(n, 1.min(n - 1), &mut rng)).collect();
            let op = KroneckerOperator::new(factors).unwrap();
            let dense = op.to_dense();
            let x: Vec<f64> = (0..op.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y = op.apply(&x);
            let yd = &dense * nalgebra::DVector::from_vec(x);
            for i in 0..op.dim() {
                assert_relative_eq!(y[i], yd[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solve_matches_dense_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let factors = vec![spd(3, 1, &mut rng), spd(3, 1, &mut rng)];
        let op = KroneckerOperator::new(factors).unwrap();
        let dense = op.to_dense();
        let b: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() - 0.5).collect();
        let x = op.solve(&b);
        let xd = dense
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_vec(b));
        for i in 0..9 {
            assert_relative_eq!(x[i], xd[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn solve_then_apply_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dims in [vec![5], vec![6, 7], vec![4, 5, 6]] {
            let factors: Vec<_> = dims
                .iter()
                .map(|&n| spd(n, 2.min(n - 1), &mut rng))
                .collect();
            let op = KroneckerOperator::new(factors).unwrap();
            let b: Vec<f64> = (0..op.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let x = op.solve(&b);
            let back = op.apply(&x);
            for i in 0..op.dim() {
                assert_relative_eq!(back[i], b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let op = KroneckerOperator::new(vec![spd(3, 1, &mut rng), spd(4, 2, &mut rng)]).unwrap();
        let dense = op.to_dense();
        let diag = op.diagonal();
        for i in 0..op.dim() {
            assert_relative_eq!(diag[i], dense[(i, i)], epsilon = 1e-14);
        }
    }
}
