//! Patch parametrizations and conforming multi-patch domains.
//!
//! A patch maps the unit cube through a tensor-product spline with control
//! points; the geometry basis is independent of any field basis later built
//! on the same patch. Multi-patch domains glue patches along explicitly
//! listed faces, producing local-to-global index maps for a conforming
//! field space.

use crate::error::{Error, Result};
use crate::splines::{KnotVector, SplineSpace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// One face of the parametric cube: the side of one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub dir: usize,
    /// false is the 0.0 side, true the 1.0 side.
    pub upper: bool,
}

/// Explicit pairing of two patch faces. `reversed` flips the tangential
/// parameter of side b relative to side a (2D interfaces only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSpec {
    pub patch_a: usize,
    pub face_a: Face,
    pub patch_b: usize,
    pub face_b: Face,
    #[serde(default)]
    pub reversed: bool,
}

/// A spline parametrization of one subdomain.
#[derive(Debug, Clone)]
pub struct Patch {
    space: SplineSpace,
    /// Control points, co-lexicographic flat order, each of length d.
    control: Vec<Vec<f64>>,
    /// Collapsed-edge maps are admitted when marked singular; their
    /// Jacobian may vanish on the boundary but not at interior points.
    singular: bool,
}

/// Diagnostic from sampling the Jacobian determinant on a grid.
#[derive(Debug, Clone, Copy)]
pub struct GeometryReport {
    /// Minimum sampled |J| (the regularity margin estimate).
    pub min_det: f64,
    pub max_det: f64,
    pub singular: bool,
}

impl Patch {
    pub fn new(space: SplineSpace, control: Vec<Vec<f64>>) -> Result<Self> {
        if control.len() != space.dim() {
            return Err(Error::GeometryValidation {
                reason: format!(
                    "{} control points for a geometry basis of dimension {}",
                    control.len(),
                    space.dim()
                ),
            });
        }
        let d = space.d();
        if control.iter().any(|c| c.len() != d) {
            return Err(Error::GeometryValidation {
                reason: format!("control points must have {d} coordinates"),
            });
        }
        Ok(Patch {
            space,
            control,
            singular: false,
        })
    }

    pub fn with_singular(mut self, singular: bool) -> Self {
        self.singular = singular;
        self
    }

    pub fn space(&self) -> &SplineSpace {
        &self.space
    }

    pub fn control(&self) -> &[Vec<f64>] {
        &self.control
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn d(&self) -> usize {
        self.space.d()
    }

    /// Physical point, Jacobian matrix (d x d, J[c][k] = dF_c/dxi_k), and
    /// Jacobian determinant at a parametric point.
    pub fn eval_map(&self, point: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
        let d = self.d();
        if point.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: point.len(),
            });
        }
        // Per-direction values and first derivatives of the geometry basis.
        let per_dir: Vec<(usize, Vec<Vec<f64>>)> = self
            .space
            .directions()
            .iter()
            .zip(point)
            .map(|(kv, &x)| kv.eval_basis_derivatives(x, 1))
            .collect::<Result<_>>()?;

        let mut phys = vec![0.0; d];
        let mut jac = DMatrix::zeros(d, d);
        let counts: Vec<usize> = per_dir.iter().map(|(_, ders)| ders[0].len()).collect();
        let mut offsets = vec![0usize; d];
        loop {
            let mut multi = Vec::with_capacity(d);
            let mut value = 1.0;
            for (k, &off) in offsets.iter().enumerate() {
                multi.push(per_dir[k].0 + off);
                value *= per_dir[k].1[0][off];
            }
            let flat = self.space.flat_index(&multi);
            let cp = &self.control[flat];
            for c in 0..d {
                phys[c] += value * cp[c];
            }
            for k in 0..d {
                // Same product with direction k's value swapped for its
                // first derivative.
                let mut dv = 1.0;
                for (l, &off) in offsets.iter().enumerate() {
                    let row = if l == k { 1 } else { 0 };
                    dv *= per_dir[l].1[row][off];
                }
                for c in 0..d {
                    jac[(c, k)] += dv * cp[c];
                }
            }
            let mut k = 0;
            loop {
                offsets[k] += 1;
                if offsets[k] < counts[k] {
                    break;
                }
                offsets[k] = 0;
                k += 1;
                if k == d {
                    let det = jac.determinant();
                    return Ok((phys, jac, det));
                }
            }
        }
    }

    /// Samples |J| on a uniform grid including the boundary and reports the
    /// regularity margin. Maps whose minimum falls below `threshold` are
    /// flagged singular.
    pub fn validate_geometry(&self, grid_n: usize, threshold: f64) -> Result<GeometryReport> {
        let d = self.d();
        let mut min_det = f64::MAX;
        let mut max_det = f64::MIN;
        let mut idx = vec![0usize; d];
        loop {
            let point: Vec<f64> = idx.iter().map(|&i| i as f64 / grid_n as f64).collect();
            let (_, _, det) = self.eval_map(&point)?;
            min_det = min_det.min(det);
            max_det = max_det.max(det);
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] <= grid_n {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == d {
                    let singular = min_det < threshold;
                    if singular && !self.singular {
                        return Err(Error::GeometryValidation {
                            reason: format!(
                                "Jacobian determinant {min_det:.3e} below {threshold:.3e} on a patch not marked singular"
                            ),
                        });
                    }
                    return Ok(GeometryReport {
                        min_det,
                        max_det,
                        singular,
                    });
                }
            }
        }
    }
}

/// A set of patches plus explicit interface pairings.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub patches: Vec<Patch>,
    pub interfaces: Vec<InterfaceSpec>,
}

#[derive(Serialize, Deserialize)]
struct PatchDto {
    degrees: Vec<usize>,
    knots: Vec<Vec<f64>>,
    control_points: Vec<Vec<f64>>,
    #[serde(default)]
    singular: bool,
}

#[derive(Serialize, Deserialize)]
struct GeometryDto {
    patches: Vec<PatchDto>,
    #[serde(default)]
    interfaces: Vec<InterfaceSpec>,
}

impl Geometry {
    pub fn single(patch: Patch) -> Self {
        Geometry {
            patches: vec![patch],
            interfaces: Vec::new(),
        }
    }

    pub fn to_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        let dto = GeometryDto {
            patches: self
                .patches
                .iter()
                .map(|p| PatchDto {
                    degrees: p.space.directions().iter().map(|kv| kv.degree()).collect(),
                    knots: p
                        .space
                        .directions()
                        .iter()
                        .map(|kv| kv.knots().to_vec())
                        .collect(),
                    control_points: p.control.clone(),
                    singular: p.singular,
                })
                .collect(),
            interfaces: self.interfaces.clone(),
        };
        serde_json::to_writer_pretty(w, &dto)?;
        Ok(())
    }

    pub fn from_json<R: std::io::Read>(r: R) -> Result<Self> {
        let dto: GeometryDto = serde_json::from_reader(r)?;
        let patches = dto
            .patches
            .into_iter()
            .map(|p| {
                let kvs = p
                    .degrees
                    .iter()
                    .zip(p.knots)
                    .map(|(&deg, knots)| KnotVector::new(deg, knots))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Patch::new(SplineSpace::new(kvs), p.control_points)?.with_singular(p.singular))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Geometry {
            patches,
            interfaces: dto.interfaces,
        })
    }

    /// Programmatic geometries referenced by name in study configs.
    /// `ring<n>` builds a closed annular ring of n patches (n >= 3).
    pub fn builtin(name: &str) -> Result<Geometry> {
        match name {
            "unit_interval" => Ok(Geometry::single(unit_interval())),
            "unit_square" => Ok(Geometry::single(unit_square())),
            "unit_cube" => Ok(Geometry::single(unit_cube())),
            "quarter_annulus" => Ok(Geometry::single(quarter_annulus(1.0, 2.0))),
            "disk_sector" => Ok(Geometry::single(disk_sector())),
            "two_patch_square" => Ok(two_patch_square()),
            "four_patch_square" => Ok(four_patch_square()),
            _ => {
                if let Some(n) = name.strip_prefix("ring") {
                    let n: usize = n.parse().map_err(|_| Error::Config {
                        reason: format!("unknown geometry '{name}'"),
                    })?;
                    ring(n)
                } else {
                    Err(Error::Config {
                        reason: format!("unknown geometry '{name}'"),
                    })
                }
            }
        }
    }
}

fn linear_kv() -> KnotVector {
    KnotVector::uniform_open(1, 1)
}

fn quadratic_kv() -> KnotVector {
    KnotVector::uniform_open(2, 1)
}

/// Identity map on [0, 1].
pub fn unit_interval() -> Patch {
    let space = SplineSpace::new(vec![linear_kv()]);
    Patch::new(space, vec![vec![0.0], vec![1.0]]).unwrap()
}

/// Identity map on the unit square.
pub fn unit_square() -> Patch {
    let space = SplineSpace::new(vec![linear_kv(), linear_kv()]);
    let mut control = Vec::new();
    for y in [0.0, 1.0] {
        for x in [0.0, 1.0] {
            control.push(vec![x, y]);
        }
    }
    Patch::new(space, control).unwrap()
}

/// Identity map on the unit cube.
pub fn unit_cube() -> Patch {
    let space = SplineSpace::new(vec![linear_kv(), linear_kv(), linear_kv()]);
    let mut control = Vec::new();
    for z in [0.0, 1.0] {
        for y in [0.0, 1.0] {
            for x in [0.0, 1.0] {
                control.push(vec![x, y, z]);
            }
        }
    }
    Patch::new(space, control).unwrap()
}

/// Axis-aligned box [a, b] in d dimensions (affine image of the cube).
pub fn axis_box(lo: &[f64], hi: &[f64]) -> Patch {
    let d = lo.len();
    let space = SplineSpace::new(vec![linear_kv(); d]);
    let n = 1usize << d;
    let mut control = Vec::with_capacity(n);
    for flat in 0..n {
        let mut cp = Vec::with_capacity(d);
        for k in 0..d {
            let bit = (flat >> k) & 1;
            cp.push(if bit == 0 { lo[k] } else { hi[k] });
        }
        control.push(cp);
    }
    Patch::new(space, control).unwrap()
}

/// Parabolic arc control points from angle t0 to t1 (span below pi):
/// endpoints on the unit circle, middle point at the tangent intersection.
fn arc_controls(t0: f64, t1: f64) -> [[f64; 2]; 3] {
    let a = [t0.cos(), t0.sin()];
    let c = [t1.cos(), t1.sin()];
    let half = 0.5 * (t1 - t0);
    let mid = 0.5 * (t0 + t1);
    let scale = 1.0 / half.cos();
    let b = [scale * mid.cos(), scale * mid.sin()];
    [a, b, c]
}

/// Quarter annulus between radii r_in and r_out, quadratic along the arc
/// (degree (2, 1)). The arc is the parabolic spline through the corner
/// control point, so the domain is polynomial, not a true circle.
pub fn quarter_annulus(r_in: f64, r_out: f64) -> Patch {
    let space = SplineSpace::new(vec![quadratic_kv(), linear_kv()]);
    // Sweep from the positive y axis to the positive x axis keeps the
    // Jacobian determinant positive.
    let arc = arc_controls(std::f64::consts::FRAC_PI_2, 0.0);
    let mut control = Vec::new();
    for r in [r_in, r_out] {
        for pt in arc {
            control.push(vec![r * pt[0], r * pt[1]]);
        }
    }
    Patch::new(space, control).unwrap()
}

/// Circular sector collapsed to the origin along its second direction:
/// the edge eta = 0 degenerates to a point, so the map is singular there
/// and the patch carries the singular flag.
pub fn disk_sector() -> Patch {
    let space = SplineSpace::new(vec![quadratic_kv(), linear_kv()]);
    let arc = arc_controls(std::f64::consts::FRAC_PI_2, 0.0);
    let mut control = Vec::new();
    for _ in 0..3 {
        control.push(vec![0.0, 0.0]);
    }
    for pt in arc {
        control.push(vec![pt[0], pt[1]]);
    }
    Patch::new(space, control).unwrap().with_singular(true)
}

/// Unit square split at x = 0.5 into two conforming patches.
pub fn two_patch_square() -> Geometry {
    let left = axis_box(&[0.0, 0.0], &[0.5, 1.0]);
    let right = axis_box(&[0.5, 0.0], &[1.0, 1.0]);
    Geometry {
        patches: vec![left, right],
        interfaces: vec![InterfaceSpec {
            patch_a: 0,
            face_a: Face {
                dir: 0,
                upper: true,
            },
            patch_b: 1,
            face_b: Face {
                dir: 0,
                upper: false,
            },
            reversed: false,
        }],
    }
}

/// Unit square split into 2 x 2 quadrants; the center vertex is shared by
/// all four patches.
pub fn four_patch_square() -> Geometry {
    let q = |x0: f64, y0: f64| axis_box(&[x0, y0], &[x0 + 0.5, y0 + 0.5]);
    let patches = vec![q(0.0, 0.0), q(0.5, 0.0), q(0.0, 0.5), q(0.5, 0.5)];
    let iface = |pa: usize, fa: Face, pb: usize, fb: Face| InterfaceSpec {
        patch_a: pa,
        face_a: fa,
        patch_b: pb,
        face_b: fb,
        reversed: false,
    };
    let xlow = Face {
        dir: 0,
        upper: false,
    };
    let xhigh = Face {
        dir: 0,
        upper: true,
    };
    let ylow = Face {
        dir: 1,
        upper: false,
    };
    let yhigh = Face {
        dir: 1,
        upper: true,
    };
    Geometry {
        patches,
        interfaces: vec![
            iface(0, xhigh, 1, xlow),
            iface(2, xhigh, 3, xlow),
            iface(0, yhigh, 2, ylow),
            iface(1, yhigh, 3, ylow),
        ],
    }
}

/// Closed annular ring of n conforming patches (n >= 3) between radii
/// 1 and 2, each a parabolic-arc sector; every interface joins exactly two
/// patches.
pub fn ring(n: usize) -> Result<Geometry> {
    if n < 3 {
        return Err(Error::Config {
            reason: format!("ring needs at least 3 patches, got {n}"),
        });
    }
    let mut patches = Vec::with_capacity(n);
    let mut interfaces = Vec::with_capacity(n);
    let step = 2.0 * std::f64::consts::PI / n as f64;
    for r in 0..n {
        // Sweep angles downward so det J > 0, as in the quarter annulus.
        let t1 = -(r as f64) * step;
        let t0 = t1 + step;
        let arc = arc_controls(t0, t1);
        let space = SplineSpace::new(vec![quadratic_kv(), linear_kv()]);
        let mut control = Vec::new();
        for radius in [1.0, 2.0] {
            for pt in arc {
                control.push(vec![radius * pt[0], radius * pt[1]]);
            }
        }
        patches.push(Patch::new(space, control)?);
        interfaces.push(InterfaceSpec {
            patch_a: r,
            face_a: Face {
                dir: 0,
                upper: true,
            },
            patch_b: (r + 1) % n,
            face_b: Face {
                dir: 0,
                upper: false,
            },
            reversed: false,
        });
    }
    Ok(Geometry {
        patches,
        interfaces,
    })
}

/// Conforming field space over a multi-patch geometry with local-to-global
/// index maps.
#[derive(Debug)]
pub struct MultiPatchSpace {
    geometry: Geometry,
    field_spaces: Vec<SplineSpace>,
    local_to_global: Vec<Vec<usize>>,
    global_dim: usize,
    /// Number of (patch, local) pairs mapped onto each global index.
    multiplicity: Vec<usize>,
    n_adj: usize,
}

/// Local flat indices of a patch face, enumerated along the tangential
/// direction(s) in co-lexicographic order.
pub fn face_local_indices(space: &SplineSpace, face: Face) -> Vec<usize> {
    let dims = space.dims();
    let d = space.d();
    let fixed = if face.upper { dims[face.dir] - 1 } else { 0 };
    match d {
        1 => {
            vec![space.flat_index(&[fixed])]
        }
        2 => {
            let t = 1 - face.dir;
            (0..dims[t])
                .map(|i| {
                    let mut multi = [0usize; 2];
                    multi[face.dir] = fixed;
                    multi[t] = i;
                    space.flat_index(&multi)
                })
                .collect()
        }
        _ => {
            // 3D gluing is out of scope; single-patch 3D still works.
            let mut out = Vec::new();
            let others: Vec<usize> = (0..d).filter(|&k| k != face.dir).collect();
            let mut idx = vec![0usize; others.len()];
            loop {
                let mut multi = vec![0usize; d];
                multi[face.dir] = fixed;
                for (pos, &k) in others.iter().enumerate() {
                    multi[k] = idx[pos];
                }
                out.push(space.flat_index(&multi));
                let mut c = 0;
                loop {
                    idx[c] += 1;
                    if idx[c] < dims[others[c]] {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                    if c == others.len() {
                        return out;
                    }
                }
            }
        }
    }
}

/// Parametric points on a face at tangential coordinates ts.
fn face_points(d: usize, face: Face, ts: &[f64]) -> Vec<Vec<f64>> {
    let fixed = if face.upper { 1.0 } else { 0.0 };
    match d {
        1 => vec![vec![fixed]],
        2 => ts
            .iter()
            .map(|&t| {
                let mut pt = vec![0.0; 2];
                pt[face.dir] = fixed;
                pt[1 - face.dir] = t;
                pt
            })
            .collect(),
        _ => unreachable!("3D interfaces are rejected before sampling"),
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl MultiPatchSpace {
    /// Builds the conforming space of degree p with n_sub elements per
    /// direction on every patch.
    pub fn build(geometry: Geometry, p: usize, n_sub: usize) -> Result<Self> {
        let field_spaces: Vec<SplineSpace> = geometry
            .patches
            .iter()
            .map(|patch| {
                SplineSpace::new(vec![KnotVector::uniform_open(p, n_sub); patch.d()])
            })
            .collect();
        Self::build_with_spaces(geometry, field_spaces)
    }

    /// Builds from explicit per-patch field spaces (tangential knot vectors
    /// must match exactly across each interface).
    pub fn build_with_spaces(geometry: Geometry, field_spaces: Vec<SplineSpace>) -> Result<Self> {
        let n_patch = geometry.patches.len();
        if field_spaces.len() != n_patch {
            return Err(Error::DimensionMismatch {
                expected: n_patch,
                got: field_spaces.len(),
            });
        }
        let offsets: Vec<usize> = field_spaces
            .iter()
            .scan(0usize, |acc, s| {
                let off = *acc;
                *acc += s.dim();
                Some(off)
            })
            .collect();
        let total: usize = field_spaces.iter().map(|s| s.dim()).sum();
        let mut uf = UnionFind::new(total);

        for spec in &geometry.interfaces {
            let (ra, rb) = (spec.patch_a, spec.patch_b);
            if ra >= n_patch || rb >= n_patch {
                return Err(Error::Config {
                    reason: format!("interface references missing patch ({ra}, {rb})"),
                });
            }
            let d = geometry.patches[ra].d();
            if d != geometry.patches[rb].d() {
                return Err(Error::Conformity {
                    patch_a: ra,
                    patch_b: rb,
                    reason: "parametric dimensions differ".into(),
                });
            }
            if d == 3 {
                return Err(Error::Conformity {
                    patch_a: ra,
                    patch_b: rb,
                    reason: "3D interface gluing is not supported".into(),
                });
            }
            // Tangential field discretizations must agree exactly.
            if d == 2 {
                let kv_a = field_spaces[ra].direction(1 - spec.face_a.dir);
                let kv_b = field_spaces[rb].direction(1 - spec.face_b.dir);
                if kv_a.degree() != kv_b.degree() || kv_a.knots() != kv_b.knots() {
                    return Err(Error::Conformity {
                        patch_a: ra,
                        patch_b: rb,
                        reason: "tangential knot vectors differ".into(),
                    });
                }
            }
            // Geometry traces must agree at matched parameters.
            let samples = 33;
            let ts: Vec<f64> = (0..samples).map(|i| i as f64 / (samples - 1) as f64).collect();
            let ts_b: Vec<f64> = if spec.reversed {
                ts.iter().map(|t| 1.0 - t).collect()
            } else {
                ts.clone()
            };
            let pts_a = face_points(d, spec.face_a, &ts);
            let pts_b = face_points(d, spec.face_b, &ts_b);
            for (pa, pb) in pts_a.iter().zip(&pts_b) {
                let (xa, _, _) = geometry.patches[ra].eval_map(pa)?;
                let (xb, _, _) = geometry.patches[rb].eval_map(pb)?;
                let dist: f64 = xa
                    .iter()
                    .zip(&xb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist > 1e-12 {
                    return Err(Error::Conformity {
                        patch_a: ra,
                        patch_b: rb,
                        reason: format!("geometry traces differ by {dist:.3e} at t = {pa:?}"),
                    });
                }
            }
            // Identify matched face indices.
            let list_a = face_local_indices(&field_spaces[ra], spec.face_a);
            let mut list_b = face_local_indices(&field_spaces[rb], spec.face_b);
            if spec.reversed {
                list_b.reverse();
            }
            if list_a.len() != list_b.len() {
                return Err(Error::Conformity {
                    patch_a: ra,
                    patch_b: rb,
                    reason: "face index counts differ".into(),
                });
            }
            for (&la, &lb) in list_a.iter().zip(&list_b) {
                uf.union(offsets[ra] + la, offsets[rb] + lb);
            }
        }

        // Number the equivalence classes in first-appearance order.
        let mut global_of_root = vec![usize::MAX; total];
        let mut local_to_global = Vec::with_capacity(n_patch);
        let mut global_dim = 0usize;
        for (r, space) in field_spaces.iter().enumerate() {
            let mut map = Vec::with_capacity(space.dim());
            for i in 0..space.dim() {
                let root = uf.find(offsets[r] + i);
                if global_of_root[root] == usize::MAX {
                    global_of_root[root] = global_dim;
                    global_dim += 1;
                }
                map.push(global_of_root[root]);
            }
            local_to_global.push(map);
        }
        let mut multiplicity = vec![0usize; global_dim];
        for map in &local_to_global {
            for &g in map {
                multiplicity[g] += 1;
            }
        }
        let n_adj = multiplicity.iter().cloned().max().unwrap_or(0);

        Ok(MultiPatchSpace {
            geometry,
            field_spaces,
            local_to_global,
            global_dim,
            multiplicity,
            n_adj,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.geometry.patches.len()
    }

    pub fn patch(&self, r: usize) -> &Patch {
        &self.geometry.patches[r]
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn field_space(&self, r: usize) -> &SplineSpace {
        &self.field_spaces[r]
    }

    pub fn local_to_global(&self, r: usize) -> &[usize] {
        &self.local_to_global[r]
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    /// Maximum number of patches sharing one global index.
    pub fn n_adj(&self) -> usize {
        self.n_adj
    }

    /// Global indices supported on the domain boundary: faces that are not
    /// glued to another patch.
    pub fn boundary_globals(&self) -> Vec<usize> {
        let mut glued: Vec<Vec<Face>> = vec![Vec::new(); self.n_patches()];
        for spec in &self.geometry.interfaces {
            glued[spec.patch_a].push(spec.face_a);
            glued[spec.patch_b].push(spec.face_b);
        }
        let mut on_boundary = vec![false; self.global_dim];
        for (r, space) in self.field_spaces.iter().enumerate() {
            for dir in 0..space.d() {
                for upper in [false, true] {
                    let face = Face { dir, upper };
                    if glued[r].contains(&face) {
                        continue;
                    }
                    for l in face_local_indices(space, face) {
                        on_boundary[self.local_to_global[r][l]] = true;
                    }
                }
            }
        }
        (0..self.global_dim).filter(|&g| on_boundary[g]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_square_has_unit_jacobian() {
        let patch = unit_square();
        for pt in [[0.0, 0.0], [0.3, 0.7], [1.0, 1.0]] {
            let (x, jac, det) = patch.eval_map(&pt).unwrap();
            assert_relative_eq!(x[0], pt[0], epsilon = 1e-15);
            assert_relative_eq!(x[1], pt[1], epsilon = 1e-15);
            assert_relative_eq!(det, 1.0, epsilon = 1e-14);
            assert_relative_eq!(jac[(0, 0)], 1.0, epsilon = 1e-14);
            assert_relative_eq!(jac[(0, 1)], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn affine_scaling_doubles_determinant_per_dimension() {
        let patch = axis_box(&[0.0], &[2.0]);
        let (_, _, det) = patch.eval_map(&[0.4]).unwrap();
        assert_relative_eq!(det, 2.0, epsilon = 1e-14);
        let patch = axis_box(&[0.0, 0.0], &[2.0, 2.0]);
        let (_, _, det) = patch.eval_map(&[0.4, 0.9]).unwrap();
        assert_relative_eq!(det, 4.0, epsilon = 1e-14);
        let patch = axis_box(&[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0]);
        let (_, _, det) = patch.eval_map(&[0.4, 0.9, 0.1]).unwrap();
        assert_relative_eq!(det, 8.0, epsilon = 1e-13);
    }

    #[test]
    fn quarter_annulus_jacobian_matches_finite_differences() {
        let patch = quarter_annulus(1.0, 2.0);
        let pt = [0.5, 0.5];
        let (_, jac, det) = patch.eval_map(&pt).unwrap();
        assert!(det > 0.0);
        let h = 1e-6;
        for k in 0..2 {
            let mut plus = pt;
            let mut minus = pt;
            plus[k] += h;
            minus[k] -= h;
            let (xp, _, _) = patch.eval_map(&plus).unwrap();
            let (xm, _, _) = patch.eval_map(&minus).unwrap();
            for c in 0..2 {
                let fd = (xp[c] - xm[c]) / (2.0 * h);
                assert_relative_eq!(jac[(c, k)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quarter_annulus_hits_radii() {
        let patch = quarter_annulus(1.0, 2.0);
        let (x, _, _) = patch.eval_map(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-14);
        let (x, _, _) = patch.eval_map(&[0.0, 1.0]).unwrap();
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-14);
        let report = patch.validate_geometry(8, 1e-10).unwrap();
        assert!(!report.singular);
        assert!(report.min_det > 0.0);
    }

    #[test]
    fn disk_sector_is_flagged_singular() {
        let patch = disk_sector();
        let report = patch.validate_geometry(6, 1e-10).unwrap();
        assert!(report.singular);
        assert!(report.min_det.abs() < 1e-12);
        // Interior determinant is positive.
        let (_, _, det) = patch.eval_map(&[0.5, 0.5]).unwrap();
        assert!(det > 0.0);
    }

    #[test]
    fn unflagged_degenerate_map_is_rejected() {
        // Same collapsed-edge control net without the singular flag.
        let bad = Patch::new(
            disk_sector().space.clone(),
            disk_sector().control.to_vec(),
        )
        .unwrap();
        assert!(matches!(
            bad.validate_geometry(6, 1e-10),
            Err(Error::GeometryValidation { .. })
        ));
    }

    #[test]
    fn validate_margin_matches_dense_sampling() {
        // Distorted but regular map: bilinear with one pulled corner.
        let space = SplineSpace::new(vec![linear_kv(), linear_kv()]);
        let control = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.1, 1.0],
            vec![1.4, 1.3],
        ];
        let patch = Patch::new(space, control).unwrap();
        let coarse = patch.validate_geometry(10, 1e-10).unwrap();
        let fine = patch.validate_geometry(100, 1e-10).unwrap();
        assert!(!coarse.singular);
        assert!((coarse.min_det - fine.min_det).abs() <= 0.05 * fine.min_det.abs());
    }

    #[test]
    fn single_patch_multipatch_is_identity_map() {
        let space = MultiPatchSpace::build(Geometry::single(unit_square()), 2, 3).unwrap();
        assert_eq!(space.n_adj(), 1);
        assert_eq!(space.global_dim(), space.field_space(0).dim());
        for (i, &g) in space.local_to_global(0).iter().enumerate() {
            assert_eq!(i, g);
        }
    }

    #[test]
    fn two_patch_square_shares_one_edge() {
        let p = 1;
        let n_sub = 2;
        let space = MultiPatchSpace::build(two_patch_square(), p, n_sub).unwrap();
        let per_patch = space.field_space(0).dim();
        let shared = space.field_space(0).dims()[1];
        assert_eq!(space.global_dim(), 2 * per_patch - shared);
        assert_eq!(space.n_adj(), 2);
        // Multiplicities sum to the total local count.
        let total: usize = space.multiplicity().iter().sum();
        assert_eq!(total, 2 * per_patch);
    }

    #[test]
    fn four_patch_center_has_multiplicity_four() {
        let space = MultiPatchSpace::build(four_patch_square(), 1, 2).unwrap();
        assert_eq!(space.n_adj(), 4);
        let count_4 = space
            .multiplicity()
            .iter()
            .filter(|&&n| n == 4)
            .count();
        // Exactly one global index (the center vertex) is shared by all four.
        assert_eq!(count_4, 1);
    }

    #[test]
    fn ring_is_closed_with_pairwise_interfaces() {
        let geometry = ring(4).unwrap();
        let space = MultiPatchSpace::build(geometry, 2, 2).unwrap();
        assert_eq!(space.n_adj(), 2);
        // Every local DOF maps somewhere; glued faces drop the right count.
        let per_patch = space.field_space(0).dim();
        let edge = space.field_space(0).dims()[1];
        assert_eq!(space.global_dim(), 4 * per_patch - 4 * edge);
        // Boundary excludes the glued faces: only inner/outer circles remain.
        let boundary = space.boundary_globals();
        assert!(!boundary.is_empty());
        let dims = space.field_space(0).dims();
        assert_eq!(boundary.len(), 2 * 4 * (dims[0] - 1));
    }

    #[test]
    fn interface_traces_agree_on_both_sides() {
        let space = MultiPatchSpace::build(two_patch_square(), 2, 2).unwrap();
        // Physical points along the shared edge evaluated from both sides.
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let (xa, _, _) = space.patch(0).eval_map(&[1.0, t]).unwrap();
            let (xb, _, _) = space.patch(1).eval_map(&[0.0, t]).unwrap();
            assert_relative_eq!(xa[0], xb[0], epsilon = 1e-12);
            assert_relative_eq!(xa[1], xb[1], epsilon = 1e-12);
            // Field basis traces: identified pairs agree.
            let (fa, va) = space.field_space(0).tensor_eval(&[1.0, t]).unwrap();
            let (fb, vb) = space.field_space(1).tensor_eval(&[0.0, t]).unwrap();
            let mut trace_a = std::collections::HashMap::new();
            for (idx, v) in fa.iter().zip(&va) {
                let g = space.local_to_global(0)[*idx];
                if v.abs() > 1e-14 {
                    trace_a.insert(g, *v);
                }
            }
            for (idx, v) in fb.iter().zip(&vb) {
                let g = space.local_to_global(1)[*idx];
                if v.abs() > 1e-14 {
                    let from_a = trace_a.get(&g).copied().unwrap_or(0.0);
                    assert_relative_eq!(from_a, *v, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonmatching_interfaces_are_rejected() {
        // Right patch shifted: geometry traces disagree.
        let left = axis_box(&[0.0, 0.0], &[0.5, 1.0]);
        let right = axis_box(&[0.55, 0.0], &[1.0, 1.0]);
        let geometry = Geometry {
            patches: vec![left, right],
            interfaces: vec![InterfaceSpec {
                patch_a: 0,
                face_a: Face {
                    dir: 0,
                    upper: true,
                },
                patch_b: 1,
                face_b: Face {
                    dir: 0,
                    upper: false,
                },
                reversed: false,
            }],
        };
        match MultiPatchSpace::build(geometry, 1, 2) {
            Err(Error::Conformity {
                patch_a, patch_b, ..
            }) => {
                assert_eq!((patch_a, patch_b), (0, 1));
            }
            other => panic!("expected conformity error, got {other:?}"),
        }
    }

    #[test]
    fn geometry_json_roundtrip() {
        let geometry = two_patch_square();
        let mut buf = Vec::new();
        geometry.to_json(&mut buf).unwrap();
        let back = Geometry::from_json(buf.as_slice()).unwrap();
        assert_eq!(back.patches.len(), 2);
        assert_eq!(back.interfaces.len(), 1);
        assert_eq!(back.patches[0].control(), geometry.patches[0].control());
        let space = MultiPatchSpace::build(back, 1, 2).unwrap();
        assert_eq!(space.n_adj(), 2);
    }

    #[test]
    fn builtin_names_resolve() {
        for name in [
            "unit_interval",
            "unit_square",
            "unit_cube",
            "quarter_annulus",
            "disk_sector",
            "two_patch_square",
            "four_patch_square",
            "ring4",
            "ring6",
        ] {
            let geometry = Geometry::builtin(name).unwrap();
            assert!(!geometry.patches.is_empty(), "{name}");
        }
        assert!(Geometry::builtin("nope").is_err());
        assert!(Geometry::builtin("ring2").is_err());
    }
}
