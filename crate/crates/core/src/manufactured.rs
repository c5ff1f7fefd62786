//! Closed-form reference solutions of the wave equation
//! u_tt - omega^2 lap(u) = f, all separable as u = w(x) g(t) with a
//! harmonic time factor. Each spatial factor is a Laplace eigenfunction,
//! so the residual collapses to a multiple of w g and the source (when
//! nonzero) shares the separable form the forcing machinery expects.

use crate::assembly::{
    apply_dirichlet, assemble_multipatch, assemble_multipatch_load, global_l2_error,
    l2_projection, RayleighDamping, SemiDiscreteSystem, SystemBuild, TimeFactor,
};
use crate::error::Result;
use crate::geometry::MultiPatchSpace;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

/// Relative PCG tolerance for the L2 projections feeding initial data,
/// boundary lifts, and load vectors. Tight so projection error stays far
/// below the discretization errors the studies measure.
pub const PROJECTION_TOL: f64 = 1e-13;

type SpatialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A separable reference solution u = w(x) g(t). `source_scale` is the
/// constant in f = source_scale * w g (zero when u solves the homogeneous
/// equation); `homogeneous_boundary` records that the trace of w vanishes
/// on the intended geometry's boundary, allowing the lift to be dropped.
pub struct ReferenceSolution {
    pub name: String,
    spatial: SpatialFn,
    pub time: TimeFactor,
    pub omega: f64,
    pub source_scale: f64,
    pub homogeneous_boundary: bool,
}

impl ReferenceSolution {
    /// Standing wave on the unit interval: w = sin(10 pi x),
    /// g = cos(10 pi t) + sin(10 pi t), unit speed, source-free.
    pub fn standing_interval() -> Self {
        ReferenceSolution {
            name: "standing_interval".into(),
            spatial: Arc::new(|x: &[f64]| (10.0 * PI * x[0]).sin()),
            time: TimeFactor::cos_plus_sin(10.0 * PI),
            omega: 1.0,
            source_scale: 0.0,
            homogeneous_boundary: true,
        }
    }

    /// Standing wave on the unit square: w = sin(10 pi x) sin(10 pi y),
    /// g = cos(10 sqrt(2) pi t) + sin(10 sqrt(2) pi t), unit speed,
    /// source-free.
    pub fn standing_square() -> Self {
        ReferenceSolution {
            name: "standing_square".into(),
            spatial: Arc::new(|x: &[f64]| (10.0 * PI * x[0]).sin() * (10.0 * PI * x[1]).sin()),
            time: TimeFactor::cos_plus_sin(10.0 * SQRT_2 * PI),
            omega: 1.0,
            source_scale: 0.0,
            homogeneous_boundary: true,
        }
    }

    /// Mode j on the unit interval with speed 1/j: w = sin(j pi x),
    /// g = cos(pi t). Every mode shares the unit period, so phase error
    /// accumulated over a fixed horizon isolates temporal dispersion.
    pub fn dispersion_mode(j: usize) -> Self {
        ReferenceSolution {
            name: format!("dispersion_mode_{j}"),
            spatial: Arc::new(move |x: &[f64]| (j as f64 * PI * x[0]).sin()),
            time: TimeFactor::cosine(PI),
            omega: 1.0 / j as f64,
            source_scale: 0.0,
            homogeneous_boundary: true,
        }
    }

    /// Forced product wave for curved and multi-patch geometries:
    /// w = prod_i sin(x_i), g = cos(20 pi t) + sin(20 pi t), unit speed.
    /// lap(w) = -d w, so f = (d - (20 pi)^2) w g, and the trace of w is
    /// nonzero: the Dirichlet data exercises the boundary lift.
    pub fn forced_product(d: usize) -> Self {
        let omega_t = 20.0 * PI;
        ReferenceSolution {
            name: format!("forced_product_{d}d"),
            spatial: Arc::new(move |x: &[f64]| x.iter().take(d).map(|&c| c.sin()).product()),
            time: TimeFactor::cos_plus_sin(omega_t),
            omega: 1.0,
            source_scale: d as f64 - omega_t * omega_t,
            homogeneous_boundary: false,
        }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.spatial)(x) * self.time.eval(t)
    }

    /// Time derivative of order `order` at (x, t).
    pub fn eval_rate(&self, x: &[f64], t: f64, order: usize) -> f64 {
        (self.spatial)(x) * self.time.eval_derivative(t, order)
    }

    pub fn spatial(&self) -> &(dyn Fn(&[f64]) -> f64 + Send + Sync) {
        self.spatial.as_ref()
    }

    /// Discretizes the solution on `space`: assembles operators, projects
    /// the spatial factor, wires the source and (if needed) the boundary
    /// lift, and reduces to the free DOFs.
    pub fn discretize(
        &self,
        space: &MultiPatchSpace,
        points_per_span: usize,
        damping: RayleighDamping,
    ) -> Result<DiscreteProblem> {
        let operators = assemble_multipatch(space, points_per_span, self.omega)?;
        let w_coeffs = l2_projection(
            space,
            points_per_span,
            &|x: &[f64]| (self.spatial)(x),
            &operators,
            PROJECTION_TOL,
        )?;
        let source = if self.source_scale != 0.0 {
            let load = assemble_multipatch_load(space, points_per_span, &|x: &[f64]| {
                self.source_scale * (self.spatial)(x)
            })?;
            Some((load, self.time.clone()))
        } else {
            None
        };
        let lift = if self.homogeneous_boundary {
            None
        } else {
            Some((w_coeffs.clone(), self.time.clone()))
        };
        let boundary = space.boundary_globals();
        let system = apply_dirichlet(
            &operators,
            &boundary,
            SystemBuild {
                damping,
                source,
                lift,
            },
            self.omega,
        );
        Ok(DiscreteProblem {
            system,
            w_coeffs,
            time: self.time.clone(),
        })
    }
}

/// A reference solution reduced on a concrete spline space. Initial data
/// comes from the projected spatial factor scaled by the time factor, so
/// it is the L2 projection of the exact state.
pub struct DiscreteProblem {
    pub system: SemiDiscreteSystem,
    /// L2 projection of the spatial factor on the full global space.
    pub w_coeffs: Vec<f64>,
    time: TimeFactor,
}

impl DiscreteProblem {
    /// Free-DOF initial displacement and velocity at t = 0.
    pub fn initial_data(&self) -> (Vec<f64>, Vec<f64>) {
        let g0 = self.time.eval(0.0);
        let g1 = self.time.eval_derivative(0.0, 1);
        let u0 = self
            .system
            .free_dofs
            .iter()
            .map(|&g| g0 * self.w_coeffs[g])
            .collect();
        let v0 = self
            .system
            .free_dofs
            .iter()
            .map(|&g| g1 * self.w_coeffs[g])
            .collect();
        (u0, v0)
    }
}

/// L2 norm of u_h(t) - u(t) where u_h is given by free displacement
/// coefficients (the lift supplies the boundary part).
pub fn displacement_error(
    reference: &ReferenceSolution,
    space: &MultiPatchSpace,
    points_per_span: usize,
    system: &SemiDiscreteSystem,
    u_free: &[f64],
    t: f64,
) -> Result<f64> {
    let full = system.full_coefficients(u_free, t);
    global_l2_error(space, points_per_span, &full, &|x: &[f64]| {
        reference.eval(x, t)
    })
}

/// L2 norm of v_h(t) - u_t(t) for free velocity coefficients.
pub fn velocity_error(
    reference: &ReferenceSolution,
    space: &MultiPatchSpace,
    points_per_span: usize,
    system: &SemiDiscreteSystem,
    v_free: &[f64],
    t: f64,
) -> Result<f64> {
    let full = system.full_rate_coefficients(v_free, t);
    global_l2_error(space, points_per_span, &full, &|x: &[f64]| {
        reference.eval_rate(x, t, 1)
    })
}

/// L2 norm of the exact solution at time t, for relative errors.
pub fn exact_norm(
    reference: &ReferenceSolution,
    space: &MultiPatchSpace,
    points_per_span: usize,
    t: f64,
) -> Result<f64> {
    let zeros = vec![0.0; space.global_dim()];
    global_l2_error(space, points_per_span, &zeros, &|x: &[f64]| {
        reference.eval(x, t)
    })
}
