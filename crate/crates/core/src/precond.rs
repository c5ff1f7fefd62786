//! Mass-matrix preconditioners: a diagonally rescaled Kronecker
//! parametric mass on a single patch, P = D^{1/2} Dhat^{-1/2} Mhat
//! Dhat^{-1/2} D^{1/2} with D = diag(M) and Dhat = diag(Mhat), and an
//! additive-Schwarz sum of patch-local inverses on multi-patch spaces.
//! Application cost is linear in the number of unknowns.

use crate::assembly::univariate_mass;
use crate::error::{Error, Result};
use crate::geometry::{face_local_indices, Face, MultiPatchSpace};
use crate::linalg::{BandedSpd, KroneckerOperator};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Single-patch preconditioner. By construction diag(P) = diag(M)
/// exactly, and for an identity geometry map P equals the parametric
/// Kronecker mass itself.
pub struct SinglePatchPrecond {
    kron: KroneckerOperator,
    /// s_i = sqrt(diag(Mhat)_i / diag(M)_i); P^{-1} v = S Mhat^{-1} S v.
    scale: Vec<f64>,
    mass_diag: Vec<f64>,
}

impl SinglePatchPrecond {
    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// diag(P), equal to the mass diagonal this operator was built from.
    pub fn diagonal(&self) -> &[f64] {
        &self.mass_diag
    }

    /// w = P^{-1} v.
    pub fn apply_inverse(&self, v: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = v.iter().zip(&self.scale).map(|(x, s)| x * s).collect();
        let solved = self.kron.solve(&scaled);
        for ((o, w), s) in out.iter_mut().zip(solved).zip(&self.scale) {
            *o = w * s;
        }
    }

    /// w = P v (diagnostics only; the solver path never forms P).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = v.iter().zip(&self.scale).map(|(x, s)| x / s).collect();
        let applied = self.kron.apply(&scaled);
        for ((o, w), s) in out.iter_mut().zip(applied).zip(&self.scale) {
            *o = w / s;
        }
    }

    /// Floating-point operations of one apply_inverse, counted from the
    /// loop bounds: two diagonal scalings plus one Kronecker solve
    /// (banded forward/backward substitution along every line).
    pub fn apply_inverse_flops(&self) -> usize {
        let n = self.dim();
        let mut total = 2 * n;
        for (k, factor) in self.kron.factors().iter().enumerate() {
            let m = self.kron.dims()[k];
            let lines = n / m;
            total += lines * banded_solve_flops(m, factor.bandwidth());
        }
        total
    }
}

/// Flops of one banded Cholesky solve (forward plus backward sweep).
fn banded_solve_flops(n: usize, bw: usize) -> usize {
    let mut f = 0;
    for i in 0..n {
        let reach = i.min(bw);
        // multiply-subtract per in-band predecessor, then the pivot divide
        f += 2 * reach + 1;
    }
    2 * f
}

/// Builds the single-patch preconditioner from the assembled mass
/// diagonal and the per-direction parametric univariate masses. The
/// operator is never formed as a full matrix.
pub fn build_single_patch(
    mass_diag: &[f64],
    factors: Vec<BandedSpd>,
) -> Result<SinglePatchPrecond> {
    let n: usize = factors.iter().map(|f| f.n()).product();
    if n != mass_diag.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mass_diag.len(),
        });
    }
    let kron = KroneckerOperator::new(factors)?;
    let dhat = kron.diagonal();
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        if mass_diag[i] <= 0.0 || dhat[i] <= 0.0 {
            return Err(Error::Assembly {
                reason: format!(
                    "nonpositive diagonal at index {i}: mass {:.3e}, parametric {:.3e}",
                    mass_diag[i], dhat[i]
                ),
            });
        }
        scale.push((dhat[i] / mass_diag[i]).sqrt());
    }
    Ok(SinglePatchPrecond {
        kron,
        scale,
        mass_diag: mass_diag.to_vec(),
    })
}

/// Additive-Schwarz composition: P_ad^{-1} v = sum_r R_r^T P_r^{-1} R_r v,
/// with R_r the restriction onto patch r's free tensor block.
pub struct SchwarzPrecond {
    locals: Vec<PatchLocal>,
    dim: usize,
}

struct PatchLocal {
    /// Positions in the reduced global vector, co-lexicographic over the
    /// patch's free index ranges.
    indices: Vec<usize>,
    precond: SinglePatchPrecond,
}

impl SchwarzPrecond {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_patches(&self) -> usize {
        self.locals.len()
    }

    pub fn apply_inverse(&self, v: &[f64], out: &mut [f64]) {
        let parts: Vec<(usize, Vec<f64>)> = self
            .locals
            .par_iter()
            .enumerate()
            .map(|(r, local)| {
                let restricted: Vec<f64> = local.indices.iter().map(|&i| v[i]).collect();
                let mut w = vec![0.0; restricted.len()];
                local.precond.apply_inverse(&restricted, &mut w);
                (r, w)
            })
            .collect();
        out.fill(0.0);
        for (r, w) in parts {
            for (&i, x) in self.locals[r].indices.iter().zip(w) {
                out[i] += x;
            }
        }
    }

    pub fn apply_inverse_flops(&self) -> usize {
        self.locals
            .iter()
            .map(|l| l.precond.apply_inverse_flops() + l.indices.len())
            .sum()
    }
}

/// Builds the Schwarz preconditioner for a reduced multi-patch system.
/// `mass_diag` is the diagonal of the reduced assembled mass and
/// `free_dofs` the ascending global indices it corresponds to. Each
/// patch keeps a direction index range that drops clamped faces, so the
/// local blocks retain exact Kronecker structure.
pub fn build_schwarz(
    space: &MultiPatchSpace,
    mass_diag: &[f64],
    free_dofs: &[usize],
) -> Result<SchwarzPrecond> {
    let mut global_to_reduced = vec![usize::MAX; space.global_dim()];
    for (pos, &g) in free_dofs.iter().enumerate() {
        global_to_reduced[g] = pos;
    }
    let is_free = |g: usize| global_to_reduced[g] != usize::MAX;

    let glued = |r: usize, face: Face| {
        space.geometry().interfaces.iter().any(|s| {
            (s.patch_a == r && s.face_a == face) || (s.patch_b == r && s.face_b == face)
        })
    };

    let mut locals = Vec::with_capacity(space.n_patches());
    for r in 0..space.n_patches() {
        let fs = space.field_space(r);
        let map = space.local_to_global(r);
        let d = fs.d();
        let mut ranges = Vec::with_capacity(d);
        for k in 0..d {
            let m = fs.directions()[k].num_basis();
            // A glued face stays in the block (clamped corners are cut by
            // the other directions' ranges), as does an unconstrained
            // outer face; a clamped outer face is dropped.
            let keep = |face: Face| {
                glued(r, face)
                    || face_local_indices(fs, face)
                        .iter()
                        .all(|&l| is_free(map[l]))
            };
            let lo = usize::from(!keep(Face { dir: k, upper: false }));
            let hi = m - usize::from(!keep(Face { dir: k, upper: true }));
            if hi <= lo {
                return Err(Error::Assembly {
                    reason: format!("patch {r} has no free unknowns in direction {k}"),
                });
            }
            ranges.push((lo, hi));
        }

        let factors: Vec<BandedSpd> = (0..d)
            .map(|k| {
                let full = univariate_mass(&fs.directions()[k]);
                let (lo, hi) = ranges[k];
                BandedSpd::from_fn(hi - lo, full.bandwidth().min(hi - lo - 1), |i, j| {
                    full.get(lo + i, lo + j)
                })
            })
            .collect();

        // Reduced positions in co-lexicographic order over the ranges,
        // matching the Kronecker ordering of the local operator.
        let mut indices = Vec::new();
        let mut multi: Vec<usize> = ranges.iter().map(|&(lo, _)| lo).collect();
        let count: usize = ranges.iter().map(|&(lo, hi)| hi - lo).product();
        for _ in 0..count {
            let local = fs.flat_index(&multi);
            let g = map[local];
            if !is_free(g) {
                return Err(Error::Assembly {
                    reason: format!(
                        "patch {r} tensor block contains clamped global index {g}"
                    ),
                });
            }
            indices.push(global_to_reduced[g]);
            let mut k = 0;
            loop {
                multi[k] += 1;
                if multi[k] < ranges[k].1 {
                    break;
                }
                multi[k] = ranges[k].0;
                k += 1;
                if k == d {
                    break;
                }
            }
        }

        let local_diag: Vec<f64> = indices.iter().map(|&i| mass_diag[i]).collect();
        let precond = build_single_patch(&local_diag, factors)?;
        locals.push(PatchLocal { indices, precond });
    }
    Ok(SchwarzPrecond {
        locals,
        dim: free_dofs.len(),
    })
}

/// Dense condition number of the symmetrically preconditioned mass,
/// kappa(P^{-1/2} M P^{-1/2}), computed as the eigenvalue spread of
/// L^T P^{-1} L where M = L L^T. Diagnostics only.
pub fn dense_preconditioned_kappa(
    mass: &DMatrix<f64>,
    apply_pinv: &dyn Fn(&[f64], &mut [f64]),
) -> Result<f64> {
    let n = mass.nrows();
    let chol = mass
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { row: 0, pivot: 0.0 })?;
    let l = chol.l();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = l[(i, j)];
        }
        apply_pinv(&col, &mut out);
        for i in 0..n {
            w[(i, j)] = out[i];
        }
    }
    let mut s = l.transpose() * w;
    // Symmetrize away application roundoff before the symmetric solver.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    let eigs = s.symmetric_eigen().eigenvalues;
    let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { row: 0, pivot: min });
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_dirichlet, assemble_multipatch, RayleighDamping, SystemBuild};
    use crate::geometry::{quarter_annulus, two_patch_square, unit_square, Geometry};
    use crate::linalg::pcg;
    use crate::splines::KnotVector;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn annulus_setup(p: usize, n_sub: usize) -> (Vec<f64>, Vec<BandedSpd>, crate::linalg::CsrMatrix) {
        let space =
            MultiPatchSpace::build(Geometry::single(quarter_annulus(1.0, 2.0)), p, n_sub).unwrap();
        let ops = assemble_multipatch(&space, p + 1, 1.0).unwrap();
        let factors: Vec<BandedSpd> = space.field_space(0)
            .directions()
            .iter()
            .map(univariate_mass)
            .collect();
        (ops.mass.diagonal(), factors, ops.mass)
    }

    #[test]
    fn identity_geometry_preconditioner_is_exact() {
        let space =
            MultiPatchSpace::build(Geometry::single(unit_square()), 2, 4).unwrap();
        let ops = assemble_multipatch(&space, 3, 1.0).unwrap();
        let factors: Vec<BandedSpd> = space.field_space(0)
            .directions()
            .iter()
            .map(univariate_mass)
            .collect();
        let precond = build_single_patch(&ops.mass.diagonal(), factors).unwrap();
        // P = M exactly, so P^{-1} (M x) = x.
        let mut rng = StdRng::seed_from_u64(7);
        let x: Vec<f64> = (0..ops.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mx = ops.mass.matvec_alloc(&x);
        let mut w = vec![0.0; ops.dim];
        precond.apply_inverse(&mx, &mut w);
        for (a, b) in w.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn preconditioner_diagonal_equals_mass_diagonal() {
        let (diag, factors, _mass) = annulus_setup(2, 4);
        let precond = build_single_patch(&diag, factors).unwrap();
        assert_eq!(precond.diagonal(), &diag[..]);
        // The actual operator diagonal, from unit-vector applications.
        let n = diag.len();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in (0..n).step_by(7) {
            e.fill(0.0);
            e[j] = 1.0;
            precond.apply(&e, &mut col);
            assert_relative_eq!(col[j], diag[j], max_relative = 1e-13);
        }
    }

    #[test]
    fn apply_roundtrips_with_apply_inverse() {
        let (diag, factors, _mass) = annulus_setup(2, 4);
        let precond = build_single_patch(&diag, factors).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let v: Vec<f64> = (0..diag.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut w = vec![0.0; v.len()];
        let mut back = vec![0.0; v.len()];
        precond.apply_inverse(&v, &mut w);
        precond.apply(&w, &mut back);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_application_is_symmetric() {
        let (diag, factors, _mass) = annulus_setup(3, 3);
        let precond = build_single_patch(&diag, factors).unwrap();
        let n = diag.len();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..5 {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut pu = vec![0.0; n];
            let mut pv = vec![0.0; n];
            precond.apply_inverse(&u, &mut pu);
            precond.apply_inverse(&v, &mut pv);
            let a: f64 = pu.iter().zip(&v).map(|(x, y)| x * y).sum();
            let b: f64 = u.iter().zip(&pv).map(|(x, y)| x * y).sum();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_diagonal() {
        let kv = KnotVector::uniform_open(1, 2);
        let factors = vec![univariate_mass(&kv)];
        let mut diag = vec![1.0; kv.num_basis()];
        diag[1] = 0.0;
        assert!(build_single_patch(&diag, factors).is_err());
    }

    #[test]
    fn kappa_is_one_on_identity_geometry() {
        let space =
            MultiPatchSpace::build(Geometry::single(unit_square()), 2, 4).unwrap();
        let ops = assemble_multipatch(&space, 3, 1.0).unwrap();
        let factors: Vec<BandedSpd> = space.field_space(0)
            .directions()
            .iter()
            .map(univariate_mass)
            .collect();
        let precond = build_single_patch(&ops.mass.diagonal(), factors).unwrap();
        let kappa = dense_preconditioned_kappa(&ops.mass.to_dense(), &|v, out| {
            precond.apply_inverse(v, out)
        })
        .unwrap();
        assert_relative_eq!(kappa, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn kappa_decreases_under_refinement_on_annulus() {
        let mut kappas = Vec::new();
        for n_sub in [4, 8, 16] {
            let (diag, factors, mass) = annulus_setup(2, n_sub);
            let precond = build_single_patch(&diag, factors).unwrap();
            let kappa = dense_preconditioned_kappa(&mass.to_dense(), &|v, out| {
                precond.apply_inverse(v, out)
            })
            .unwrap();
            kappas.push(kappa);
        }
        assert!(
            kappas[0] > kappas[1] && kappas[1] > kappas[2],
            "expected monotone decrease, got {kappas:?}"
        );
        assert!(kappas[2] < kappas[0] && kappas[2] > 1.0);
    }

    #[test]
    fn flop_count_is_linear_in_unknowns() {
        let mut per_dof = Vec::new();
        for n_sub in [8, 16, 32] {
            let kvs = vec![
                KnotVector::uniform_open(2, n_sub),
                KnotVector::uniform_open(2, n_sub),
            ];
            let factors: Vec<BandedSpd> = kvs.iter().map(univariate_mass).collect();
            let n: usize = factors.iter().map(|f| f.n()).product();
            let precond = build_single_patch(&vec![1.0; n], factors).unwrap();
            per_dof.push(precond.apply_inverse_flops() as f64 / n as f64);
        }
        for w in per_dof.windows(2) {
            assert!((w[1] / w[0] - 1.0).abs() < 0.2, "per-DOF cost drifts: {per_dof:?}");
        }
    }

    #[test]
    fn schwarz_on_one_patch_matches_single_patch() {
        let space =
            MultiPatchSpace::build(Geometry::single(quarter_annulus(1.0, 2.0)), 2, 4).unwrap();
        let ops = assemble_multipatch(&space, 3, 1.0).unwrap();
        let boundary = space.boundary_globals();
        let system = apply_dirichlet(
            &ops,
            &boundary,
            SystemBuild {
                damping: RayleighDamping::default(),
                source: None,
                lift: None,
            },
            1.0,
        );
        let schwarz =
            build_schwarz(&space, &system.mass.diagonal(), &system.free_dofs).unwrap();
        assert_eq!(schwarz.n_patches(), 1);

        // Reference: reduced factors built by hand (interior ranges).
        let factors: Vec<BandedSpd> = space.field_space(0)
            .directions()
            .iter()
            .map(|kv| {
                let full = univariate_mass(kv);
                let m = kv.num_basis();
                BandedSpd::from_fn(m - 2, kv.degree().min(m - 3), |i, j| {
                    full.get(1 + i, 1 + j)
                })
            })
            .collect();
        let single = build_single_patch(&system.mass.diagonal(), factors).unwrap();

        let n = system.n_free();
        let mut rng = StdRng::seed_from_u64(5);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        schwarz.apply_inverse(&v, &mut a);
        single.apply_inverse(&v, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn schwarz_is_symmetric_and_bounded_on_two_patches() {
        let mut kappas = Vec::new();
        for n_sub in [4, 8] {
            let space = MultiPatchSpace::build(two_patch_square(), 2, n_sub).unwrap();
            let ops = assemble_multipatch(&space, 3, 1.0).unwrap();
            let boundary = space.boundary_globals();
            let system = apply_dirichlet(
                &ops,
                &boundary,
                SystemBuild {
                    damping: RayleighDamping::default(),
                    source: None,
                    lift: None,
                },
                1.0,
            );
            let schwarz =
                build_schwarz(&space, &system.mass.diagonal(), &system.free_dofs).unwrap();
            let n = system.n_free();
            let mut rng = StdRng::seed_from_u64(17);
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut pu = vec![0.0; n];
            let mut pv = vec![0.0; n];
            schwarz.apply_inverse(&u, &mut pu);
            schwarz.apply_inverse(&v, &mut pv);
            let a: f64 = pu.iter().zip(&v).map(|(x, y)| x * y).sum();
            let b: f64 = u.iter().zip(&pv).map(|(x, y)| x * y).sum();
            assert_relative_eq!(a, b, max_relative = 1e-12);

            let kappa = dense_preconditioned_kappa(&system.mass.to_dense(), &|x, out| {
                schwarz.apply_inverse(x, out)
            })
            .unwrap();
            kappas.push(kappa);
        }
        // Bounded under refinement: no growth beyond a small slack.
        assert!(kappas[1] <= kappas[0] * 1.05, "kappa grew: {kappas:?}");
        assert!(kappas[0] < 30.0);
    }

    #[test]
    fn pcg_with_preconditioner_converges_fast() {
        // 1D mass, p=2: iteration count consistent with the dense
        // condition number bound.
        let space = MultiPatchSpace::build(
            Geometry::single(crate::geometry::unit_interval()),
            2,
            16,
        )
        .unwrap();
        let ops = assemble_multipatch(&space, 3, 1.0).unwrap();
        let factors: Vec<BandedSpd> = space.field_space(0)
            .directions()
            .iter()
            .map(univariate_mass)
            .collect();
        let precond = build_single_patch(&ops.mass.diagonal(), factors).unwrap();
        let kappa = dense_preconditioned_kappa(&ops.mass.to_dense(), &|v, out| {
            precond.apply_inverse(v, out)
        })
        .unwrap();

        let n = ops.dim;
        let mut rng = StdRng::seed_from_u64(23);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let apply_a = |v: &[f64], out: &mut [f64]| ops.mass.matvec(v, out);
        let apply_pinv = |v: &[f64], out: &mut [f64]| precond.apply_inverse(v, out);
        let (_, report) = pcg(&apply_a, &apply_pinv, &b, None, 1e-12, 200);
        assert!(report.converged);
        let tol: f64 = 1e-12;
        let bound = (kappa.sqrt() * (2.0 / tol).ln() / 2.0).ceil() as usize + 1;
        assert!(
            report.iterations <= bound,
            "iterations {} exceed kappa bound {bound} (kappa {kappa:.3})",
            report.iterations
        );
        assert!(report.iterations <= 15);
    }
}
