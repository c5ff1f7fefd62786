//! Compressed-row sparse matrices with sorted column indices.

use rayon::prelude::*;

/// Immutable CSR matrix. Column indices are sorted and unique within each
/// row; duplicate triplets are summed during construction.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < nrows && c < ncols);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            let pos = next[r];
            cols[pos] = c;
            vals[pos] = v;
            next[r] += 1;
        }
        // Sort each row by column and merge duplicates in place.
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        for r in 0..nrows {
            let lo = counts[r];
            let hi = counts[r + 1];
            let mut entries: Vec<(usize, f64)> =
                cols[lo..hi].iter().cloned().zip(vals[lo..hi].iter().cloned()).collect();
            entries.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in entries {
                if out_cols.len() > row_ptr[r] && *out_cols.last().unwrap() == c {
                    *out_vals.last_mut().unwrap() += v;
                } else {
                    out_cols.push(c);
                    out_vals.push(v);
                }
            }
            row_ptr[r + 1] = out_cols.len();
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx: out_cols,
            values: out_vals,
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    /// All-zero matrix with no stored entries.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        // Row-parallel product is deterministic: each y[i] is reduced by one
        // thread in index order.
        if self.nrows >= 4096 {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                let (cols, vals) = self.row(i);
                *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                let (cols, vals) = self.row(i);
                *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            }
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest absolute asymmetry |A - A^T|; zero for symmetric assembly.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// C = alpha * A + beta * B (matching shapes).
    pub fn add_scaled(alpha: f64, a: &CsrMatrix, beta: f64, b: &CsrMatrix) -> CsrMatrix {
        assert_eq!(a.nrows, b.nrows);
        assert_eq!(a.ncols, b.ncols);
        let mut triplets = Vec::with_capacity(a.nnz() + b.nnz());
        for i in 0..a.nrows {
            let (cols, vals) = a.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (i, c, alpha * v)));
            let (cols, vals) = b.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (i, c, beta * v)));
        }
        CsrMatrix::from_triplets(a.nrows, a.ncols, &triplets)
    }

    /// Extracts the submatrix with the given (sorted or unsorted) row and
    /// column index sets, renumbered to 0..len.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(old_r);
            for (&c, &v) in cs.iter().zip(vs) {
                if col_map[c] != usize::MAX {
                    triplets.push((new_r, col_map[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &triplets)
    }

    /// Dense copy for desk-scale oracles and diagnostics.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut dense = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[(i, c)] = v;
            }
        }
        dense
    }

    /// Writes `row col value` lines for debugging.
    pub fn write_triplets<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i} {c} {v:.16e}")?;
            }
        }
        Ok(())
    }
}
