//! Mirrors the README's library example; keeps the documented API real.

use genalpha_core::assembly::RayleighDamping;
use genalpha_core::geometry::{Geometry, MultiPatchSpace};
use genalpha_core::integrator::{init_state, step, GenAlphaParams, MassPrecond, MassSolver};
use genalpha_core::manufactured::{displacement_error, ReferenceSolution};
use genalpha_core::precond::build_schwarz;

#[test]
fn readme_example_runs() -> genalpha_core::Result<()> {
    let space = MultiPatchSpace::build(Geometry::builtin("unit_square")?, 3, 32)?;
    let reference = ReferenceSolution::standing_square();
    let problem = reference.discretize(&space, 5, RayleighDamping::default())?;
    let system = &problem.system;

    let params = GenAlphaParams::uniform(2, 0.5)?;
    let precond = build_schwarz(&space, &system.mass.diagonal(), &system.free_dofs)?;
    let mut solver = MassSolver::new(&system.mass, MassPrecond::Schwarz(precond));

    let (u0, v0) = problem.initial_data();
    let mut state = init_state(system, &params, u0, v0, 0.0, 1e-4, &mut solver)?;
    for _ in 0..1000 {
        step(system, &params, &mut state, &mut solver)?;
    }
    let error = displacement_error(&reference, &space, 5, system, &state.y[0], state.t)?;

    // t = 0.1 after 1000 steps; the discrete solution should track the
    // closed form to well under the spatial resolution.
    assert!((state.t - 0.1).abs() < 1e-12);
    assert!(error < 5e-3, "error {error}");
    Ok(())
}
