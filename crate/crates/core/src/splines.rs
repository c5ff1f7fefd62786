//! Univariate and tensor-product B-spline bases on open knot vectors.
//!
//! Bases are evaluated with the Cox-de Boor recurrence (0/0 = 0 convention)
//! and derivatives with the knot-difference recursion. All types are
//! immutable after construction; evaluation is pure.

use crate::error::{Error, Result};

/// An open knot vector on [0, 1] together with its polynomial degree.
///
/// "Open" means the first and last knots repeat exactly p+1 times, so the
/// basis is interpolatory at both endpoints. Interior knot multiplicity is
/// capped at p, which keeps every basis function continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Validates and wraps a knot sequence.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidKnots {
                reason: format!("need at least {} knots for degree {p}", 2 * (p + 1)),
            });
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidKnots {
                reason: "knots must be nondecreasing".into(),
            });
        }
        let n = knots.len();
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[n - 1 - p..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidKnots {
                reason: "open knot vector on [0, 1] required: first p+1 knots 0, last p+1 knots 1"
                    .into(),
            });
        }
        // Interior multiplicity <= p (multiplicity p+1 would disconnect the basis).
        let interior = &knots[p + 1..n - 1 - p];
        let mut run = 1usize;
        for w in interior.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > p {
                return Err(Error::InvalidKnots {
                    reason: format!("interior knot {} has multiplicity > {p}", w[0]),
                });
            }
        }
        Ok(KnotVector { degree, knots })
    }

    /// Uniform open knot vector with simple interior knots at i/n_sub:
    /// the maximal-regularity space of degree p on n_sub elements.
    pub fn uniform_open(degree: usize, n_sub: usize) -> Self {
        assert!(n_sub >= 1, "need at least one element");
        let mut knots = vec![0.0; degree + 1];
        for i in 1..n_sub {
            knots.push(i as f64 / n_sub as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        KnotVector { degree, knots }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions m.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Nonempty spans as (knot index i, xi_i, xi_{i+1}).
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        let m = self.num_basis();
        (self.degree..m)
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .map(|i| (i, self.knots[i], self.knots[i + 1]))
            .collect()
    }

    /// Ratio of smallest to largest nonempty span width (1 means uniform).
    pub fn quasi_uniformity(&self) -> f64 {
        let widths: Vec<f64> = self.spans().iter().map(|&(_, a, b)| b - a).collect();
        let max = widths.iter().cloned().fold(f64::MIN, f64::max);
        let min = widths.iter().cloned().fold(f64::MAX, f64::min);
        min / max
    }

    /// Knot index i with xi_i <= x < xi_{i+1}; the last nonempty span is
    /// closed at x = 1.
    pub fn find_span(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain { x });
        }
        let p = self.degree;
        let m = self.num_basis();
        if x >= self.knots[m] {
            // x = 1: walk back to the last nonempty span.
            let mut i = m - 1;
            while self.knots[i] == self.knots[i + 1] {
                i -= 1;
            }
            return Ok(i);
        }
        let mut lo = p;
        let mut hi = m;
        let mut mid = (lo + hi) / 2;
        while x < self.knots[mid] || x >= self.knots[mid + 1] {
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        Ok(mid)
    }

    /// The p+1 basis values active at x: (first active index, values).
    ///
    /// Values are nonnegative and sum to 1.
    pub fn eval_basis(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let span = self.find_span(x)?;
        let p = self.degree;
        let mut values = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                // 0/0 = 0 convention for degenerate spans mid-recursion.
                let temp = if denom != 0.0 { values[r] / denom } else { 0.0 };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        Ok((span - p, values))
    }

    /// Basis values and derivatives through order r at x.
    ///
    /// Returns (first active index, rows), where rows[a][s] is the a-th
    /// derivative of the (first+s)-th basis function. Orders above p are
    /// exact zeros.
    pub fn eval_basis_derivatives(&self, x: f64, order: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        let span = self.find_span(x)?;
        let p = self.degree;
        let r_max = order.min(p);

        // Triangle of basis values by degree, plus stored knot differences.
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] != 0.0 {
                    ndu[r][j - 1] / ndu[j][r]
                } else {
                    0.0
                };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }

        // Derivative rows from alternating sums over lower-degree columns.
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let mut s1 = 0;
            let mut s2 = 1;
            a[0][0] = 1.0;
            for k in 1..=r_max {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = if ndu[pk + 1][rk as usize] != 0.0 {
                        a[s1][0] / ndu[pk + 1][rk as usize]
                    } else {
                        0.0
                    };
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let denom = ndu[pk + 1][(rk + j as isize) as usize];
                    a[s2][j] = if denom != 0.0 {
                        (a[s1][j] - a[s1][j - 1]) / denom
                    } else {
                        0.0
                    };
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = if ndu[pk + 1][r] != 0.0 {
                        -a[s1][k - 1] / ndu[pk + 1][r]
                    } else {
                        0.0
                    };
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }

        // Multiply through by p!/(p-k)!.
        let mut factor = p as f64;
        for k in 1..=r_max {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        Ok((span - p, ders))
    }

    /// Greville abscissae: the knot averages that serve as natural
    /// interpolation/control sites for each basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        let m = self.num_basis();
        (0..m)
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Basis indices whose support touches the boundary point (0 or 1).
    pub fn boundary_indices(&self) -> (usize, usize) {
        (0, self.num_basis() - 1)
    }
}

/// Tensor-product spline space: one knot vector per direction, flat indices
/// in co-lexicographic order (first direction fastest).
#[derive(Debug, Clone)]
pub struct SplineSpace {
    directions: Vec<KnotVector>,
}

impl SplineSpace {
    pub fn new(directions: Vec<KnotVector>) -> Self {
        assert!(
            (1..=3).contains(&directions.len()),
            "spatial dimension must be 1, 2, or 3"
        );
        SplineSpace { directions }
    }

    pub fn d(&self) -> usize {
        self.directions.len()
    }

    pub fn direction(&self, k: usize) -> &KnotVector {
        &self.directions[k]
    }

    pub fn directions(&self) -> &[KnotVector] {
        &self.directions
    }

    /// Per-direction basis counts.
    pub fn dims(&self) -> Vec<usize> {
        self.directions.iter().map(|kv| kv.num_basis()).collect()
    }

    /// Total dimension N = prod m_k.
    pub fn dim(&self) -> usize {
        self.directions.iter().map(|kv| kv.num_basis()).product()
    }

    /// Flat index of a multi-index, first direction fastest.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.d());
        let mut flat = 0;
        for k in (0..self.d()).rev() {
            debug_assert!(multi[k] < self.directions[k].num_basis());
            flat = flat * self.directions[k].num_basis() + multi[k];
        }
        flat
    }

    /// Inverse of `flat_index`.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.directions
            .iter()
            .map(|kv| {
                let m = kv.num_basis();
                let i = rest % m;
                rest /= m;
                i
            })
            .collect()
    }

    /// Active flat indices and basis values at a point of the unit cube.
    /// Values are products of per-direction univariate values and sum to 1.
    pub fn tensor_eval(&self, point: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        if point.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: point.len(),
            });
        }
        let per_dir: Vec<(usize, Vec<f64>)> = self
            .directions
            .iter()
            .zip(point)
            .map(|(kv, &x)| kv.eval_basis(x))
            .collect::<Result<_>>()?;

        let counts: Vec<usize> = per_dir.iter().map(|(_, v)| v.len()).collect();
        let total: usize = counts.iter().product();
        let mut indices = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut offsets = vec![0usize; self.d()];
        loop {
            let mut value = 1.0;
            let mut multi = Vec::with_capacity(self.d());
            for (k, &off) in offsets.iter().enumerate() {
                let (first, ref vals) = per_dir[k];
                value *= vals[off];
                multi.push(first + off);
            }
            indices.push(self.flat_index(&multi));
            values.push(value);
            // Odometer increment, first direction fastest.
            let mut k = 0;
            loop {
                offsets[k] += 1;
                if offsets[k] < counts[k] {
                    break;
                }
                offsets[k] = 0;
                k += 1;
                if k == self.d() {
                    return Ok((indices, values));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan_span(kv: &KnotVector, x: f64) -> usize {
        // Brute-force oracle: first span containing x, closed at 1.
        let spans = kv.spans();
        for &(i, a, b) in &spans {
            if x >= a && x < b {
                return i;
            }
        }
        spans.last().unwrap().0
    }

    #[test]
    fn find_span_examples() {
        let kv = KnotVector::new(1, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
        assert_eq!(kv.find_span(0.25).unwrap(), 1);
        assert_eq!(kv.find_span(1.0).unwrap(), 2);
        assert!(kv.find_span(-0.1).is_err());
        assert!(kv.find_span(1.1).is_err());
    }

    #[test]
    fn find_span_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for p in 0..=4 {
            for n_sub in [1, 2, 3, 7, 16] {
                let kv = KnotVector::uniform_open(p, n_sub);
                for _ in 0..200 {
                    let x: f64 = rng.gen();
                    assert_eq!(kv.find_span(x).unwrap(), linear_scan_span(&kv, x));
                }
                assert_eq!(kv.find_span(0.0).unwrap(), linear_scan_span(&kv, 0.0));
                assert_eq!(kv.find_span(1.0).unwrap(), linear_scan_span(&kv, 1.0));
            }
        }
    }

    #[test]
    fn piecewise_constant_is_indicator() {
        let kv = KnotVector::new(0, vec![0.0, 0.5, 1.0]).unwrap();
        let (first, vals) = kv.eval_basis(0.25).unwrap();
        assert_eq!(first, 0);
        assert_eq!(vals, vec![1.0]);
        let (first, vals) = kv.eval_basis(0.75).unwrap();
        assert_eq!(first, 1);
        assert_eq!(vals, vec![1.0]);
    }

    #[test]
    fn quadratic_with_interior_knot_at_half() {
        // Hand-expanded recurrence at the interior knot: the two interior
        // functions split evenly and the incoming one is still zero.
        let kv = KnotVector::new(2, vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let (first, vals) = kv.eval_basis(0.5).unwrap();
        assert_eq!(first, 1);
        assert_relative_eq!(vals[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(vals[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(vals[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        for p in 0..=5 {
            for n_sub in [1, 4, 9] {
                let kv = KnotVector::uniform_open(p, n_sub);
                for i in 0..=1000 {
                    let x = i as f64 / 1000.0;
                    let (_, vals) = kv.eval_basis(x).unwrap();
                    let sum: f64 = vals.iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-14, "p={p} n={n_sub} x={x}: {sum}");
                    assert!(vals.iter().all(|&v| v >= -1e-15));
                }
            }
        }
    }

    #[test]
    fn local_support() {
        let kv = KnotVector::uniform_open(3, 8);
        let knots = kv.knots().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x: f64 = rng.gen();
            let (first, vals) = kv.eval_basis(x).unwrap();
            for (off, &v) in vals.iter().enumerate() {
                let i = first + off;
                if v.abs() > 0.0 {
                    assert!(x >= knots[i] - 1e-15 && x <= knots[i + 4] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn hat_function_slopes() {
        let kv = KnotVector::uniform_open(1, 4);
        let h = 0.25;
        let (_, ders) = kv.eval_basis_derivatives(0.3, 1).unwrap();
        // Two active hats on the span: one descending, one ascending.
        assert_relative_eq!(ders[1][0], -1.0 / h, epsilon = 1e-12);
        assert_relative_eq!(ders[1][1], 1.0 / h, epsilon = 1e-12);
    }

    #[test]
    fn derivative_rows_sum_to_zero() {
        for p in 1..=4 {
            let kv = KnotVector::uniform_open(p, 6);
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let (_, ders) = kv.eval_basis_derivatives(x, p).unwrap();
                for order in 1..=p {
                    let sum: f64 = ders[order].iter().sum();
                    assert!(sum.abs() < 1e-9 * (1.0 / 0.05_f64).powi(order as i32));
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let step = 1e-6;
        for p in 1..=4 {
            let kv = KnotVector::uniform_open(p, 5);
            for i in 1..10 {
                let x = i as f64 / 10.0 - 0.03; // keep x +/- step inside one span
                let (first, ders) = kv.eval_basis_derivatives(x, 1).unwrap();
                let (fp, vp) = kv.eval_basis(x + step).unwrap();
                let (fm, vm) = kv.eval_basis(x - step).unwrap();
                assert_eq!(fp, first);
                assert_eq!(fm, first);
                for j in 0..=p {
                    let fd = (vp[j] - vm[j]) / (2.0 * step);
                    let scale = ders[1][j].abs().max(1.0);
                    assert!(
                        (ders[1][j] - fd).abs() <= 1e-5 * scale,
                        "p={p} x={x} j={j}: analytic {} vs fd {fd}",
                        ders[1][j]
                    );
                }
            }
        }
    }

    #[test]
    fn zeroth_derivative_row_equals_basis_values() {
        let kv = KnotVector::uniform_open(3, 7);
        for i in 0..=30 {
            let x = i as f64 / 30.0;
            let (f0, vals) = kv.eval_basis(x).unwrap();
            let (f1, ders) = kv.eval_basis_derivatives(x, 2).unwrap();
            assert_eq!(f0, f1);
            for j in 0..vals.len() {
                assert_relative_eq!(vals[j], ders[0][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn orders_beyond_degree_are_zero() {
        let kv = KnotVector::uniform_open(2, 3);
        let (_, ders) = kv.eval_basis_derivatives(0.4, 4).unwrap();
        assert_eq!(ders.len(), 5);
        assert!(ders[3].iter().all(|&v| v == 0.0));
        assert!(ders[4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_product_structure() {
        let space = SplineSpace::new(vec![
            KnotVector::uniform_open(2, 3),
            KnotVector::uniform_open(1, 4),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pt = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (idx, vals) = space.tensor_eval(&pt).unwrap();
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-14);

            let (f0, v0) = space.direction(0).eval_basis(pt[0]).unwrap();
            let (f1, v1) = space.direction(1).eval_basis(pt[1]).unwrap();
            for (pos, &flat) in idx.iter().enumerate() {
                let multi = space.multi_index(flat);
                let prod = v0[multi[0] - f0] * v1[multi[1] - f1];
                assert_relative_eq!(vals[pos], prod, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_span_constant_space_is_trivial() {
        let space = SplineSpace::new(vec![
            KnotVector::new(0, vec![0.0, 1.0]).unwrap(),
            KnotVector::new(0, vec![0.0, 1.0]).unwrap(),
        ]);
        let (idx, vals) = space.tensor_eval(&[0.3, 0.8]).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(vals, vec![1.0]);
    }

    #[test]
    fn flat_index_roundtrip_colex() {
        let space = SplineSpace::new(vec![
            KnotVector::uniform_open(1, 3),
            KnotVector::uniform_open(2, 2),
            KnotVector::uniform_open(1, 2),
        ]);
        let dims = space.dims();
        assert_eq!(space.dim(), dims.iter().product::<usize>());
        // First direction fastest: flat of (1,0,0) is 1, of (0,1,0) is m_0.
        assert_eq!(space.flat_index(&[1, 0, 0]), 1);
        assert_eq!(space.flat_index(&[0, 1, 0]), dims[0]);
        for flat in 0..space.dim() {
            assert_eq!(space.flat_index(&space.multi_index(flat)), flat);
        }
    }

    #[test]
    fn uniform_open_is_quasi_uniform() {
        let kv = KnotVector::uniform_open(3, 10);
        assert_relative_eq!(kv.quasi_uniformity(), 1.0, epsilon = 1e-12);
        assert_eq!(kv.num_basis(), 13);
        assert_eq!(kv.spans().len(), 10);
    }

    #[test]
    fn rejects_malformed_knots() {
        assert!(KnotVector::new(1, vec![0.0, 0.0, 0.6, 0.5, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(2, vec![0.0, 0.0, 0.5, 1.0, 1.0]).is_err());
        // Interior multiplicity p+1 disconnects the basis.
        assert!(KnotVector::new(1, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(2, vec![0.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn greville_sites_interpolate_identity() {
        // Sum of greville_i * b_i(x) reproduces x for any spline space,
        // the defining property of the Greville abscissae.
        for p in 1..=4 {
            let kv = KnotVector::uniform_open(p, 5);
            let g = kv.greville();
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                let (first, vals) = kv.eval_basis(x).unwrap();
                let rec: f64 = vals.iter().enumerate().map(|(j, v)| v * g[first + j]).sum();
                assert_relative_eq!(rec, x, epsilon = 1e-13);
            }
        }
    }
}
