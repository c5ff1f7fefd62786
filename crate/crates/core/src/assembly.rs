//! Galerkin assembly of mass, stiffness, damping, and load terms on
//! single- and multi-patch spline spaces, plus Dirichlet constraint
//! handling producing the reduced second-order system
//! M u'' + C u' + K u = F(t).

use crate::error::{Error, Result};
use crate::geometry::{MultiPatchSpace, Patch};
use crate::linalg::{pcg, BandedSpd, CsrMatrix};
use crate::quadrature::DirectionRule;
use crate::splines::{KnotVector, SplineSpace};
use rayon::prelude::*;
use std::sync::Once;

/// Closed-form time dependence with exact derivatives of every order.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFactor {
    Zero,
    Constant(f64),
    /// c * cos(omega t) + s * sin(omega t)
    Harmonic { omega: f64, c: f64, s: f64 },
}

impl TimeFactor {
    pub fn cos_plus_sin(omega: f64) -> Self {
        TimeFactor::Harmonic {
            omega,
            c: 1.0,
            s: 1.0,
        }
    }

    pub fn cosine(omega: f64) -> Self {
        TimeFactor::Harmonic {
            omega,
            c: 1.0,
            s: 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::Zero => 0.0,
            TimeFactor::Constant(v) => v,
            TimeFactor::Harmonic { omega, c, s } => {
                c * (omega * t).cos() + s * (omega * t).sin()
            }
        }
    }

    /// The factor of d/dt applied once.
    pub fn derivative(&self) -> TimeFactor {
        match *self {
            TimeFactor::Zero | TimeFactor::Constant(_) => TimeFactor::Zero,
            TimeFactor::Harmonic { omega, c, s } => TimeFactor::Harmonic {
                omega,
                c: omega * s,
                s: -omega * c,
            },
        }
    }

    pub fn nth_derivative(&self, order: usize) -> TimeFactor {
        let mut f = self.clone();
        for _ in 0..order {
            f = f.derivative();
        }
        f
    }

    pub fn eval_derivative(&self, t: f64, order: usize) -> f64 {
        self.nth_derivative(order).eval(t)
    }

    pub fn scaled(&self, a: f64) -> TimeFactor {
        match *self {
            TimeFactor::Zero => TimeFactor::Zero,
            TimeFactor::Constant(v) => TimeFactor::Constant(a * v),
            TimeFactor::Harmonic { omega, c, s } => TimeFactor::Harmonic {
                omega,
                c: a * c,
                s: a * s,
            },
        }
    }
}

/// Right-hand side F(t) with time-derivative access.
pub enum Forcing {
    /// Sum of spatial vectors times closed-form time factors; derivatives
    /// of every order are exact.
    Separable(Vec<(Vec<f64>, TimeFactor)>),
    /// Plain callback; derivatives fall back to central finite differences
    /// of the given step (orders up to 3) and log a warning once.
    Sampled {
        f: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
        step: f64,
        warn: Once,
    },
}

impl Forcing {
    pub fn zero() -> Self {
        Forcing::Separable(Vec::new())
    }

    pub fn eval_into(&self, t: f64, order: usize, out: &mut [f64]) {
        out.fill(0.0);
        match self {
            Forcing::Separable(terms) => {
                for (vec, factor) in terms {
                    let g = factor.eval_derivative(t, order);
                    if g != 0.0 {
                        for (o, v) in out.iter_mut().zip(vec) {
                            *o += g * v;
                        }
                    }
                }
            }
            Forcing::Sampled { f, step, warn } => {
                if order > 0 {
                    warn.call_once(|| {
                        log::warn!(
                            "forcing derivatives approximated by central differences (step {step:.3e})"
                        );
                    });
                }
                let h = *step;
                let acc = |out: &mut [f64], v: Vec<f64>, w: f64| {
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += w * x;
                    }
                };
                match order {
                    0 => acc(out, f(t), 1.0),
                    1 => {
                        acc(out, f(t + h), 0.5 / h);
                        acc(out, f(t - h), -0.5 / h);
                    }
                    2 => {
                        acc(out, f(t + h), 1.0 / (h * h));
                        acc(out, f(t), -2.0 / (h * h));
                        acc(out, f(t - h), 1.0 / (h * h));
                    }
                    3 => {
                        let w = 0.5 / (h * h * h);
                        acc(out, f(t + 2.0 * h), w);
                        acc(out, f(t + h), -2.0 * w);
                        acc(out, f(t - h), 2.0 * w);
                        acc(out, f(t - 2.0 * h), -w);
                    }
                    _ => panic!("sampled forcing supports derivatives up to order 3, got {order}"),
                }
            }
        }
    }

    pub fn eval(&self, t: f64, order: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.eval_into(t, order, &mut out);
        out
    }
}

/// Assembles integrals over one patch with a field space independent of the
/// geometry basis. Gauss points per span default to p+1 per direction,
/// exact for spline products under affine maps.
pub struct PatchAssembler<'a> {
    field: &'a SplineSpace,
    patch: &'a Patch,
    rules: Vec<DirectionRule>,
}

/// Per-quadrature-point data of one element: weight, physical point,
/// basis values and physical gradients of the active functions.
struct QpData {
    weight_det: f64,
    phys: Vec<f64>,
    values: Vec<f64>,
    grads: Vec<Vec<f64>>,
}

impl<'a> PatchAssembler<'a> {
    pub fn new(field: &'a SplineSpace, patch: &'a Patch, points_per_span: usize) -> Result<Self> {
        if field.d() != patch.d() {
            return Err(Error::DimensionMismatch {
                expected: patch.d(),
                got: field.d(),
            });
        }
        let rules = field
            .directions()
            .iter()
            .map(|kv| DirectionRule::new(&kv.spans(), points_per_span))
            .collect();
        Ok(PatchAssembler {
            field,
            patch,
            rules,
        })
    }

    /// Default rule: degree + 1 points per span per direction.
    pub fn with_default_rule(field: &'a SplineSpace, patch: &'a Patch) -> Result<Self> {
        let pps = field
            .directions()
            .iter()
            .map(|kv| kv.degree() + 1)
            .max()
            .unwrap();
        Self::new(field, patch, pps)
    }

    fn d(&self) -> usize {
        self.field.d()
    }

    /// Number of elements (tensor product of nonempty spans).
    fn n_elements(&self) -> usize {
        self.rules.iter().map(|r| r.spans.len()).product()
    }

    fn element_multi(&self, e: usize) -> Vec<usize> {
        let mut rest = e;
        self.rules
            .iter()
            .map(|r| {
                let n = r.spans.len();
                let i = rest % n;
                rest /= n;
                i
            })
            .collect()
    }

    /// Active flat field indices of element e (co-lexicographic order of
    /// local offsets) plus the per-quadrature-point values and gradients.
    fn element_data(&self, e: usize, needs_grad: bool) -> Result<(Vec<usize>, Vec<QpData>)> {
        let d = self.d();
        let em = self.element_multi(e);
        // Per-direction basis tables at each point of this span.
        let mut first = vec![0usize; d];
        let mut tables: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(d);
        for k in 0..d {
            let span = &self.rules[k].spans[em[k]];
            let mut per_point = Vec::with_capacity(span.points.len());
            for &x in &span.points {
                let (f, ders) = self.field.direction(k).eval_basis_derivatives(x, 1)?;
                first[k] = f;
                per_point.push(ders);
            }
            tables.push(per_point);
        }
        let p1: Vec<usize> = (0..d)
            .map(|k| self.field.direction(k).degree() + 1)
            .collect();
        let n_loc: usize = p1.iter().product();

        // Flat field indices of the active functions.
        let mut active = Vec::with_capacity(n_loc);
        let mut offs = vec![0usize; d];
        loop {
            let multi: Vec<usize> = (0..d).map(|k| first[k] + offs[k]).collect();
            active.push(self.field.flat_index(&multi));
            let mut k = 0;
            loop {
                offs[k] += 1;
                if offs[k] < p1[k] {
                    break;
                }
                offs[k] = 0;
                k += 1;
                if k == d {
                    offs.iter_mut().for_each(|o| *o = 0);
                    break;
                }
            }
            if active.len() == n_loc {
                break;
            }
        }

        // Quadrature loop.
        let qcounts: Vec<usize> = (0..d)
            .map(|k| self.rules[k].spans[em[k]].points.len())
            .collect();
        let nq: usize = qcounts.iter().product();
        let mut qps = Vec::with_capacity(nq);
        let mut qi = vec![0usize; d];
        for _ in 0..nq {
            let point: Vec<f64> = (0..d)
                .map(|k| self.rules[k].spans[em[k]].points[qi[k]])
                .collect();
            let w: f64 = (0..d)
                .map(|k| self.rules[k].spans[em[k]].weights[qi[k]])
                .product();
            let (phys, jac, det) = self.patch.eval_map(&point)?;
            if det <= 0.0 {
                return Err(Error::GeometryValidation {
                    reason: format!(
                        "nonpositive Jacobian determinant {det:.3e} at quadrature point {point:?}"
                    ),
                });
            }
            let jac_inv_t = if needs_grad {
                Some(jac.transpose().try_inverse().ok_or_else(|| {
                    Error::GeometryValidation {
                        reason: format!("Jacobian not invertible at {point:?}"),
                    }
                })?)
            } else {
                None
            };

            let mut values = Vec::with_capacity(n_loc);
            let mut grads = Vec::with_capacity(if needs_grad { n_loc } else { 0 });
            let mut offs = vec![0usize; d];
            for _ in 0..n_loc {
                let mut value = 1.0;
                for k in 0..d {
                    value *= tables[k][qi[k]][0][offs[k]];
                }
                values.push(value);
                if let Some(jit) = &jac_inv_t {
                    // Parametric gradient, then push-forward by J^{-T}.
                    let mut hat = vec![0.0; d];
                    for k in 0..d {
                        let mut g = 1.0;
                        for l in 0..d {
                            let row = usize::from(l == k);
                            g *= tables[l][qi[l]][row][offs[l]];
                        }
                        hat[k] = g;
                    }
                    let mut phys_grad = vec![0.0; d];
                    for r in 0..d {
                        for c in 0..d {
                            phys_grad[r] += jit[(r, c)] * hat[c];
                        }
                    }
                    grads.push(phys_grad);
                }
                let mut k = 0;
                loop {
                    offs[k] += 1;
                    if offs[k] < p1[k] {
                        break;
                    }
                    offs[k] = 0;
                    k += 1;
                    if k == d {
                        break;
                    }
                }
            }
            qps.push(QpData {
                weight_det: w * det,
                phys,
                values,
                grads,
            });
            let mut k = 0;
            loop {
                qi[k] += 1;
                if qi[k] < qcounts[k] {
                    break;
                }
                qi[k] = 0;
                k += 1;
                if k == d {
                    break;
                }
            }
        }
        Ok((active, qps))
    }

    fn assemble_triplets(
        &self,
        needs_grad: bool,
        element_kernel: impl Fn(&[usize], &[QpData], &mut Vec<(usize, usize, f64)>) + Sync,
    ) -> Result<Vec<(usize, usize, f64)>> {
        let results: Vec<Result<Vec<(usize, usize, f64)>>> = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                let (active, qps) = self.element_data(e, needs_grad)?;
                let mut local = Vec::new();
                element_kernel(&active, &qps, &mut local);
                Ok(local)
            })
            .collect();
        let mut triplets = Vec::new();
        for r in results {
            triplets.extend(r?);
        }
        Ok(triplets)
    }

    /// Mass matrix: entries are integrals of basis products weighted by the
    /// geometry Jacobian determinant.
    pub fn mass(&self) -> Result<CsrMatrix> {
        let triplets = self.assemble_triplets(false, |active, qps, out| {
            let n = active.len();
            let mut block = vec![0.0; n * n];
            for qp in qps {
                for a in 0..n {
                    let wa = qp.weight_det * qp.values[a];
                    for b in a..n {
                        block[a * n + b] += wa * qp.values[b];
                    }
                }
            }
            for a in 0..n {
                for b in a..n {
                    let v = block[a * n + b];
                    out.push((active[a], active[b], v));
                    if b != a {
                        out.push((active[b], active[a], v));
                    }
                }
            }
        })?;
        Ok(CsrMatrix::from_triplets(
            self.field.dim(),
            self.field.dim(),
            &triplets,
        ))
    }

    /// Stiffness matrix for wave speed omega: omega^2 times the integral of
    /// physical gradient products.
    pub fn stiffness(&self, omega: f64) -> Result<CsrMatrix> {
        let w2 = omega * omega;
        let d = self.d();
        let triplets = self.assemble_triplets(true, move |active, qps, out| {
            let n = active.len();
            let mut block = vec![0.0; n * n];
            for qp in qps {
                for a in 0..n {
                    for b in a..n {
                        let mut g = 0.0;
                        for k in 0..d {
                            g += qp.grads[a][k] * qp.grads[b][k];
                        }
                        block[a * n + b] += qp.weight_det * w2 * g;
                    }
                }
            }
            for a in 0..n {
                for b in a..n {
                    let v = block[a * n + b];
                    out.push((active[a], active[b], v));
                    if b != a {
                        out.push((active[b], active[a], v));
                    }
                }
            }
        })?;
        Ok(CsrMatrix::from_triplets(
            self.field.dim(),
            self.field.dim(),
            &triplets,
        ))
    }

    /// Load vector for a spatial density evaluated at physical points.
    pub fn load(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Vec<f64>> {
        let contribs: Vec<Result<(Vec<usize>, Vec<f64>)>> = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                let (active, qps) = self.element_data(e, false)?;
                let mut local = vec![0.0; active.len()];
                for qp in qps {
                    let fv = f(&qp.phys) * qp.weight_det;
                    for (l, v) in local.iter_mut().zip(&qp.values) {
                        *l += fv * v;
                    }
                }
                Ok((active, local))
            })
            .collect();
        let mut out = vec![0.0; self.field.dim()];
        for c in contribs {
            let (active, local) = c?;
            for (&i, v) in active.iter().zip(local) {
                out[i] += v;
            }
        }
        Ok(out)
    }

    /// Integral of (sum_i coeffs[i] B_i - exact)^2 over the patch.
    pub fn l2_error_sq(
        &self,
        coeffs: &[f64],
        exact: &(dyn Fn(&[f64]) -> f64 + Sync),
    ) -> Result<f64> {
        let parts: Vec<Result<f64>> = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                let (active, qps) = self.element_data(e, false)?;
                let mut acc = 0.0;
                for qp in qps {
                    let mut uh = 0.0;
                    for (pos, &i) in active.iter().enumerate() {
                        uh += coeffs[i] * qp.values[pos];
                    }
                    let diff = uh - exact(&qp.phys);
                    acc += qp.weight_det * diff * diff;
                }
                Ok(acc)
            })
            .collect();
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }
}

/// Mass matrix of a field space over one patch.
pub fn assemble_mass(
    field: &SplineSpace,
    patch: &Patch,
    points_per_span: usize,
) -> Result<CsrMatrix> {
    PatchAssembler::new(field, patch, points_per_span)?.mass()
}

/// Stiffness matrix of a field space over one patch.
pub fn assemble_stiffness(
    field: &SplineSpace,
    patch: &Patch,
    points_per_span: usize,
    omega: f64,
) -> Result<CsrMatrix> {
    PatchAssembler::new(field, patch, points_per_span)?.stiffness(omega)
}

/// Load vector of a spatial density over one patch.
pub fn assemble_load(
    field: &SplineSpace,
    patch: &Patch,
    points_per_span: usize,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    PatchAssembler::new(field, patch, points_per_span)?.load(f)
}

/// Univariate parametric mass matrix (no geometry weight) of a knot
/// vector, banded with bandwidth p.
pub fn univariate_mass(kv: &KnotVector) -> BandedSpd {
    let p = kv.degree();
    let m = kv.num_basis();
    let rule = DirectionRule::new(&kv.spans(), p + 1);
    let mut dense = vec![0.0; m * (p + 1)];
    let band_index = |i: usize, j: usize| i * (p + 1) + (j + p - i);
    for span in &rule.spans {
        for (&x, &w) in span.points.iter().zip(&span.weights) {
            let (first, vals) = kv.eval_basis(x).expect("quadrature point inside [0,1]");
            for a in 0..vals.len() {
                for b in 0..=a {
                    let (i, j) = (first + a, first + b);
                    dense[band_index(i, j)] += w * vals[a] * vals[b];
                }
            }
        }
    }
    BandedSpd::from_fn(m, p, |i, j| dense[band_index(i, j)])
}

/// Global mass and stiffness over a conforming multi-patch space.
pub struct GlobalOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub dim: usize,
}

/// Assembles global operators by scattering patch contributions through
/// the local-to-global maps.
pub fn assemble_multipatch(
    space: &MultiPatchSpace,
    points_per_span: usize,
    omega: f64,
) -> Result<GlobalOperators> {
    let dim = space.global_dim();
    let mut mass_triplets = Vec::new();
    let mut stiff_triplets = Vec::new();
    for r in 0..space.n_patches() {
        let asm = PatchAssembler::new(space.field_space(r), space.patch(r), points_per_span)?;
        let map = space.local_to_global(r);
        let m = asm.mass()?;
        let k = asm.stiffness(omega)?;
        for i in 0..m.nrows() {
            let (cols, vals) = m.row(i);
            mass_triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (map[i], map[c], v)));
            let (cols, vals) = k.row(i);
            stiff_triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (map[i], map[c], v)));
        }
    }
    Ok(GlobalOperators {
        mass: CsrMatrix::from_triplets(dim, dim, &mass_triplets),
        stiffness: CsrMatrix::from_triplets(dim, dim, &stiff_triplets),
        dim,
    })
}

/// Global load vector from a spatial density.
pub fn assemble_multipatch_load(
    space: &MultiPatchSpace,
    points_per_span: usize,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; space.global_dim()];
    for r in 0..space.n_patches() {
        let asm = PatchAssembler::new(space.field_space(r), space.patch(r), points_per_span)?;
        let local = asm.load(f)?;
        let map = space.local_to_global(r);
        for (i, v) in local.into_iter().enumerate() {
            out[map[i]] += v;
        }
    }
    Ok(out)
}

/// Global L2 projection of a function: solves M c = load with Jacobi PCG.
pub fn l2_projection(
    space: &MultiPatchSpace,
    points_per_span: usize,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    operators: &GlobalOperators,
    tol: f64,
) -> Result<Vec<f64>> {
    let b = assemble_multipatch_load(space, points_per_span, f)?;
    let diag = operators.mass.diagonal();
    let apply_a = |v: &[f64], out: &mut [f64]| operators.mass.matvec(v, out);
    let apply_pinv = |v: &[f64], out: &mut [f64]| {
        for i in 0..v.len() {
            out[i] = v[i] / diag[i];
        }
    };
    let (c, report) = pcg(&apply_a, &apply_pinv, &b, None, tol, 10_000);
    if !report.converged {
        return Err(Error::PcgNoConvergence {
            iterations: report.iterations,
            residual: report.relative_residual,
        });
    }
    Ok(c)
}

/// L2 error of a global coefficient vector against an exact function.
pub fn global_l2_error(
    space: &MultiPatchSpace,
    points_per_span: usize,
    coeffs: &[f64],
    exact: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..space.n_patches() {
        let asm = PatchAssembler::new(space.field_space(r), space.patch(r), points_per_span)?;
        let map = space.local_to_global(r);
        let local: Vec<f64> = map.iter().map(|&g| coeffs[g]).collect();
        total += asm.l2_error_sq(&local, exact)?;
    }
    Ok(total.sqrt())
}

/// Reduced second-order system on the free (non-Dirichlet) indices.
pub struct SemiDiscreteSystem {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub damping: Option<CsrMatrix>,
    pub forcing: Forcing,
    /// Global indices of the free rows, in ascending order.
    pub free_dofs: Vec<usize>,
    /// Global indices pinned by the Dirichlet condition.
    pub boundary_dofs: Vec<usize>,
    /// Boundary coefficients (full global length, nonzero on boundary
    /// indices) and their time factor; None for homogeneous conditions.
    pub lift: Option<(Vec<f64>, TimeFactor)>,
    pub global_dim: usize,
    pub omega: f64,
}

impl SemiDiscreteSystem {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn force(&self, t: f64, order: usize) -> Vec<f64> {
        self.forcing.eval(t, order, self.n_free())
    }

    /// Scatters a free-DOF vector into global length, adding the lift at
    /// time t on boundary indices.
    pub fn full_coefficients(&self, u_free: &[f64], t: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.global_dim];
        for (pos, &g) in self.free_dofs.iter().enumerate() {
            full[g] = u_free[pos];
        }
        if let Some((w, factor)) = &self.lift {
            let g = factor.eval(t);
            for &b in &self.boundary_dofs {
                full[b] += g * w[b];
            }
        }
        full
    }

    /// Scatters a free-DOF velocity into global length, adding the lift
    /// time derivative on boundary indices.
    pub fn full_rate_coefficients(&self, v_free: &[f64], t: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.global_dim];
        for (pos, &g) in self.free_dofs.iter().enumerate() {
            full[g] = v_free[pos];
        }
        if let Some((w, factor)) = &self.lift {
            let g = factor.eval_derivative(t, 1);
            for &b in &self.boundary_dofs {
                full[b] += g * w[b];
            }
        }
        full
    }

    /// Single-DOF system for modal and oracle tests.
    pub fn scalar(m: f64, c: f64, k: f64, forcing: Forcing) -> Self {
        SemiDiscreteSystem {
            mass: CsrMatrix::from_triplets(1, 1, &[(0, 0, m)]),
            stiffness: CsrMatrix::from_triplets(1, 1, &[(0, 0, k)]),
            damping: if c != 0.0 {
                Some(CsrMatrix::from_triplets(1, 1, &[(0, 0, c)]))
            } else {
                None
            },
            forcing,
            free_dofs: vec![0],
            boundary_dofs: vec![],
            lift: None,
            global_dim: 1,
            omega: 1.0,
        }
    }
}

/// Rayleigh damping coefficients C = a0 M + a1 K.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayleighDamping {
    pub a0: f64,
    pub a1: f64,
}

/// Dirichlet data and source for building a reduced system:
/// boundary values are (coefficients of) w_b(x) * g(t), the source is a
/// spatial load vector times its own time factor.
pub struct SystemBuild {
    pub damping: RayleighDamping,
    /// Full-length global load vector and factor; None for no source.
    pub source: Option<(Vec<f64>, TimeFactor)>,
    /// Full-length boundary coefficient vector and factor; None pins the
    /// boundary to zero.
    pub lift: Option<(Vec<f64>, TimeFactor)>,
}

/// Eliminates Dirichlet rows and columns, moving lift couplings into the
/// forcing: F_free(t) = load * g_f(t) - K_fb w_b g(t) - C_fb w_b g'(t)
/// - M_fb w_b g''(t).
pub fn apply_dirichlet(
    operators: &GlobalOperators,
    boundary: &[usize],
    build: SystemBuild,
    omega: f64,
) -> SemiDiscreteSystem {
    let dim = operators.dim;
    let mut is_boundary = vec![false; dim];
    for &b in boundary {
        is_boundary[b] = true;
    }
    let free: Vec<usize> = (0..dim).filter(|&i| !is_boundary[i]).collect();
    let mass = operators.mass.submatrix(&free, &free);
    let stiffness = operators.stiffness.submatrix(&free, &free);
    let has_damping = build.damping.a0 != 0.0 || build.damping.a1 != 0.0;
    let damping = has_damping.then(|| {
        CsrMatrix::add_scaled(build.damping.a0, &mass, build.damping.a1, &stiffness)
    });

    let mut terms: Vec<(Vec<f64>, TimeFactor)> = Vec::new();
    if let Some((load, factor)) = &build.source {
        let restricted: Vec<f64> = free.iter().map(|&g| load[g]).collect();
        terms.push((restricted, factor.clone()));
    }
    if let Some((w, factor)) = &build.lift {
        let mut boundary_sorted = boundary.to_vec();
        boundary_sorted.sort_unstable();
        boundary_sorted.dedup();
        let k_fb = operators.stiffness.submatrix(&free, &boundary_sorted);
        let m_fb = operators.mass.submatrix(&free, &boundary_sorted);
        let wb: Vec<f64> = boundary_sorted.iter().map(|&b| w[b]).collect();
        let kw = k_fb.matvec_alloc(&wb);
        let mw = m_fb.matvec_alloc(&wb);
        terms.push((kw.iter().map(|v| -v).collect(), factor.clone()));
        terms.push((mw.iter().map(|v| -v).collect(), factor.nth_derivative(2)));
        if has_damping {
            let cw: Vec<f64> = kw
                .iter()
                .zip(&mw)
                .map(|(k, m)| build.damping.a1 * k + build.damping.a0 * m)
                .collect();
            terms.push((cw.iter().map(|v| -v).collect(), factor.nth_derivative(1)));
        }
    }

    let mut boundary_sorted = boundary.to_vec();
    boundary_sorted.sort_unstable();
    boundary_sorted.dedup();
    SemiDiscreteSystem {
        mass,
        stiffness,
        damping,
        forcing: Forcing::Separable(terms),
        free_dofs: free,
        boundary_dofs: boundary_sorted,
        lift: build.lift,
        global_dim: dim,
        omega,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        axis_box, quarter_annulus, two_patch_square, unit_interval, unit_square, Geometry,
        MultiPatchSpace,
    };
    use crate::linalg::KroneckerOperator;
    use approx::assert_relative_eq;

    fn interval_space(p: usize, n_sub: usize) -> SplineSpace {
        SplineSpace::new(vec![KnotVector::uniform_open(p, n_sub)])
    }

    #[test]
    fn linear_mass_stencil_on_uniform_mesh() {
        let n_sub = 8;
        let h = 1.0 / n_sub as f64;
        let patch = unit_interval();
        let field = interval_space(1, n_sub);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let m = asm.mass().unwrap();
        // Interior rows carry (h/6)[1, 4, 1].
        for i in 2..(field.dim() - 2) {
            assert_relative_eq!(m.get(i, i - 1), h / 6.0, epsilon = 1e-14);
            assert_relative_eq!(m.get(i, i), 4.0 * h / 6.0, epsilon = 1e-14);
            assert_relative_eq!(m.get(i, i + 1), h / 6.0, epsilon = 1e-14);
        }
        assert_eq!(m.max_asymmetry(), 0.0);
    }

    #[test]
    fn linear_stiffness_stencil_on_uniform_mesh() {
        let n_sub = 8;
        let h = 1.0 / n_sub as f64;
        let patch = unit_interval();
        let field = interval_space(1, n_sub);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let k = asm.stiffness(1.0).unwrap();
        for i in 2..(field.dim() - 2) {
            assert_relative_eq!(k.get(i, i - 1), -1.0 / h, epsilon = 1e-12);
            assert_relative_eq!(k.get(i, i), 2.0 / h, epsilon = 1e-12);
        }
        // Row sums vanish: gradients annihilate constants.
        let ones = vec![1.0; field.dim()];
        let k1 = k.matvec_alloc(&ones);
        for v in k1 {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_scales_with_wave_speed_squared() {
        let patch = unit_square();
        let field = SplineSpace::new(vec![
            KnotVector::uniform_open(2, 3),
            KnotVector::uniform_open(2, 3),
        ]);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let k1 = asm.stiffness(1.0).unwrap();
        let k3 = asm.stiffness(3.0).unwrap();
        for i in 0..field.dim() {
            let (cols, vals) = k1.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                assert_relative_eq!(k3.get(i, c), 9.0 * v, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn mass_total_equals_domain_measure() {
        let patch = unit_square();
        let field = SplineSpace::new(vec![
            KnotVector::uniform_open(2, 4),
            KnotVector::uniform_open(3, 3),
        ]);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let m = asm.mass().unwrap();
        let ones = vec![1.0; field.dim()];
        let m1 = m.matvec_alloc(&ones);
        let total: f64 = m1.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-13);
        // Quarter annulus: area of the true parabolic-arc region.
        let patch = quarter_annulus(1.0, 2.0);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let m = asm.mass().unwrap();
        let m1 = m.matvec_alloc(&ones);
        let total: f64 = m1.iter().sum();
        // |J| = (r_in + eta (r_out - r_in)) (r_out - r_in) * 2(xi^2 - xi + 1)
        // integrates to (3/2) * (5/3) = 2.5.
        assert_relative_eq!(total, 2.5, epsilon = 1e-10);
    }

    #[test]
    fn identity_map_mass_is_kronecker_product() {
        let patch = unit_square();
        let kv0 = KnotVector::uniform_open(2, 3);
        let kv1 = KnotVector::uniform_open(1, 4);
        let field = SplineSpace::new(vec![kv0.clone(), kv1.clone()]);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let m = asm.mass().unwrap().to_dense();
        let kron = KroneckerOperator::new(vec![univariate_mass(&kv0), univariate_mass(&kv1)])
            .unwrap()
            .to_dense();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                assert!(
                    (m[(i, j)] - kron[(i, j)]).abs() <= 1e-14,
                    "entry ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    kron[(i, j)]
                );
            }
        }
    }

    #[test]
    fn load_of_zero_vanishes_and_constant_integrates_measure() {
        let patch = unit_square();
        let field = SplineSpace::new(vec![
            KnotVector::uniform_open(2, 3),
            KnotVector::uniform_open(2, 3),
        ]);
        let asm = PatchAssembler::with_default_rule(&field, &patch).unwrap();
        let zero = asm.load(&|_: &[f64]| 0.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = asm.load(&|_: &[f64]| 1.0).unwrap();
        assert_relative_eq!(one.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn load_matches_refined_quadrature() {
        let patch = unit_square();
        let field = SplineSpace::new(vec![
            KnotVector::uniform_open(4, 8),
            KnotVector::uniform_open(4, 8),
        ]);
        let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin()
            * (2.0 * std::f64::consts::PI * x[1]).sin();
        let base = PatchAssembler::new(&field, &patch, 5)
            .unwrap()
            .load(&f)
            .unwrap();
        let refined = PatchAssembler::new(&field, &patch, 8)
            .unwrap()
            .load(&f)
            .unwrap();
        for (a, b) in base.iter().zip(&refined) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gauss_order_beyond_exactness_changes_nothing_on_affine_maps() {
        let patch = axis_box(&[0.0, 0.0], &[2.0, 1.0]);
        let field = SplineSpace::new(vec![
            KnotVector::uniform_open(3, 3),
            KnotVector::uniform_open(3, 3),
        ]);
        let base = PatchAssembler::new(&field, &patch, 4)
            .unwrap()
            .mass()
            .unwrap();
        let refined = PatchAssembler::new(&field, &patch, 7)
            .unwrap()
            .mass()
            .unwrap();
        for i in 0..field.dim() {
            let (cols, _) = base.row(i);
            for &c in cols {
                assert!((base.get(i, c) - refined.get(i, c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn multipatch_matches_single_patch_with_repeated_knot() {
        // Two conforming patches on the half-squares against one patch with
        // a C0 interior knot line at x = 0.5: the global mass matrices agree
        // up to the Greville-position permutation.
        let p = 2;
        let n_sub = 2;
        let mp = MultiPatchSpace::build(two_patch_square(), p, n_sub).unwrap();
        let mp_ops = assemble_multipatch(&mp, p + 1, 1.0).unwrap();

        // Single patch: x knots subdivide each half, 0.5 repeated p times.
        let mut x_knots = vec![0.0; p + 1];
        for j in 1..n_sub {
            x_knots.push(0.5 * j as f64 / n_sub as f64);
        }
        for _ in 0..p {
            x_knots.push(0.5);
        }
        for j in 1..n_sub {
            x_knots.push(0.5 + 0.5 * j as f64 / n_sub as f64);
        }
        x_knots.extend(std::iter::repeat(1.0).take(p + 1));
        let kv_x = KnotVector::new(p, x_knots).unwrap();
        let kv_y = KnotVector::uniform_open(p, n_sub);
        let field = SplineSpace::new(vec![kv_x.clone(), kv_y.clone()]);
        let patch = unit_square();
        let sp = PatchAssembler::new(&field, &patch, p + 1).unwrap();
        let sp_mass = sp.mass().unwrap();

        assert_eq!(mp.global_dim(), field.dim());

        // Match DOFs by physical Greville position.
        let gx = kv_x.greville();
        let gy = kv_y.greville();
        let mut perm = vec![usize::MAX; mp.global_dim()];
        for r in 0..2 {
            let fs = mp.field_space(r);
            let grev: Vec<Vec<f64>> = fs.directions().iter().map(|kv| kv.greville()).collect();
            for local in 0..fs.dim() {
                let multi = fs.multi_index(local);
                let param = [grev[0][multi[0]], grev[1][multi[1]]];
                let (phys, _, _) = mp.patch(r).eval_map(&param).unwrap();
                // Locate in the single-patch lattice.
                let ix = gx
                    .iter()
                    .position(|&g| (g - phys[0]).abs() < 1e-12)
                    .expect("x Greville match");
                let iy = gy
                    .iter()
                    .position(|&g| (g - phys[1]).abs() < 1e-12)
                    .expect("y Greville match");
                let gmp = mp.local_to_global(r)[local];
                let gsp = field.flat_index(&[ix, iy]);
                if perm[gmp] == usize::MAX {
                    perm[gmp] = gsp;
                } else {
                    assert_eq!(perm[gmp], gsp, "interface DOF maps consistently");
                }
            }
        }
        for i in 0..mp.global_dim() {
            for j in 0..mp.global_dim() {
                let a = mp_ops.mass.get(i, j);
                let b = sp_mass.get(perm[i], perm[j]);
                assert!(
                    (a - b).abs() <= 1e-13,
                    "mass mismatch at ({i}, {j}): {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn single_patch_multipatch_assembly_reduces_to_patch_assembly() {
        let mp = MultiPatchSpace::build(Geometry::single(unit_square()), 2, 3).unwrap();
        let ops = assemble_multipatch(&mp, 3, 1.0).unwrap();
        let asm = PatchAssembler::new(mp.field_space(0), mp.patch(0), 3).unwrap();
        let direct = asm.mass().unwrap();
        for i in 0..ops.dim {
            let (cols, vals) = direct.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                assert_relative_eq!(ops.mass.get(i, c), v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn interface_rows_sum_patch_contributions() {
        // Against refined quadrature on the same multipatch assembly.
        let mp = MultiPatchSpace::build(two_patch_square(), 2, 2).unwrap();
        let base = assemble_multipatch(&mp, 3, 1.0).unwrap();
        let refined = assemble_multipatch(&mp, 6, 1.0).unwrap();
        for i in 0..base.dim {
            let (cols, _) = base.mass.row(i);
            for &c in cols {
                assert!((base.mass.get(i, c) - refined.mass.get(i, c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dirichlet_reduction_keeps_interior_block() {
        let n_sub = 4;
        let mp = MultiPatchSpace::build(Geometry::single(unit_interval()), 1, n_sub).unwrap();
        let ops = assemble_multipatch(&mp, 2, 1.0).unwrap();
        let boundary = mp.boundary_globals();
        assert_eq!(boundary, vec![0, n_sub]);
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
        assert_eq!(system.n_free(), n_sub - 1);
        let h = 1.0 / n_sub as f64;
        for i in 0..system.n_free() {
            assert_relative_eq!(system.mass.get(i, i), 4.0 * h / 6.0, epsilon = 1e-14);
        }
        // SPD of the reduced mass.
        let dense = system.mass.to_dense();
        assert!(dense.cholesky().is_some());
    }

    #[test]
    fn constant_lift_contributes_to_force_but_not_its_derivative() {
        let mp = MultiPatchSpace::build(Geometry::single(unit_interval()), 1, 4).unwrap();
        let ops = assemble_multipatch(&mp, 2, 1.0).unwrap();
        let boundary = mp.boundary_globals();
        let mut w = vec![0.0; ops.dim];
        for &b in &boundary {
            w[b] = 2.0;
        }
        let system = apply_dirichlet(
            &ops,
            &boundary,
            SystemBuild {
                damping: RayleighDamping::default(),
                source: None,
                lift: Some((w, TimeFactor::Constant(1.0))),
            },
            1.0,
        );
        let f0 = system.force(0.3, 0);
        assert!(f0.iter().any(|&v| v != 0.0));
        let f1 = system.force(0.3, 1);
        assert!(f1.iter().all(|&v| v == 0.0));
        let f2 = system.force(0.3, 2);
        assert!(f2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_factor_derivatives() {
        let g = TimeFactor::cos_plus_sin(3.0);
        let t = 0.37;
        // d/dt (cos 3t + sin 3t) = -3 sin 3t + 3 cos 3t
        assert_relative_eq!(
            g.eval_derivative(t, 1),
            -3.0 * (3.0 * t).sin() + 3.0 * (3.0 * t).cos(),
            epsilon = 1e-14
        );
        // Second derivative is -9 g.
        assert_relative_eq!(g.eval_derivative(t, 2), -9.0 * g.eval(t), epsilon = 1e-13);
        // Third derivative is -9 g'.
        assert_relative_eq!(
            g.eval_derivative(t, 3),
            -9.0 * g.eval_derivative(t, 1),
            epsilon = 1e-12
        );
        assert_eq!(TimeFactor::Constant(5.0).eval_derivative(1.0, 1), 0.0);
    }

    #[test]
    fn sampled_forcing_derivatives_match_analytic() {
        let forcing = Forcing::Sampled {
            f: Box::new(|t: f64| vec![(2.0 * t).sin()]),
            step: 1e-4,
            warn: Once::new(),
        };
        let t = 0.4;
        let d1 = forcing.eval(t, 1, 1)[0];
        assert_relative_eq!(d1, 2.0 * (2.0 * t).cos(), epsilon = 1e-6);
        let d2 = forcing.eval(t, 2, 1)[0];
        assert_relative_eq!(d2, -4.0 * (2.0 * t).sin(), epsilon = 1e-4);
        let d3 = forcing.eval(t, 3, 1)[0];
        assert_relative_eq!(d3, -8.0 * (2.0 * t).cos(), epsilon = 1e-2);
    }

    #[test]
    fn l2_error_of_exact_projection_is_small() {
        let mp = MultiPatchSpace::build(Geometry::single(unit_square()), 3, 6).unwrap();
        let ops = assemble_multipatch(&mp, 4, 1.0).unwrap();
        let f = |x: &[f64]| (x[0] + 0.5 * x[1]).powi(3);
        let coeffs = l2_projection(&mp, 4, &f, &ops, 1e-13).unwrap();
        // Cubic target lies in the cubic spline space.
        let err = global_l2_error(&mp, 6, &coeffs, &f).unwrap();
        assert!(err < 1e-10, "projection error {err}");
    }
}
