//! Batch study drivers: a JSON config selects a study kind and its
//! parameter grid; each driver returns typed rows and serializes them as
//! CSV with a fixed, documented column set. Independent grid cells run in
//! parallel; every run is deterministic for a given config.

use crate::assembly::RayleighDamping;
use crate::error::{Error, Result};
use crate::geometry::{Geometry, MultiPatchSpace};
use crate::integrator::{
    init_state, integrate, GenAlphaParams, MassPrecond, MassSolver,
};
use crate::manufactured::{displacement_error, exact_norm, ReferenceSolution};
use crate::precond::build_schwarz;
use crate::spectral::{find_stability, spectrum_sweep};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use std::io::Write;

/// PCG tolerance for the mass solves inside study integrations. Tighter
/// than the default so solver noise stays below the finest measured
/// discretization errors.
pub const STUDY_PCG_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    TimeConvergence,
    SpaceConvergence,
    Dispersion,
    PrecondIterations,
    Spectrum,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time-convergence" => Ok(StudyKind::TimeConvergence),
            "space-convergence" => Ok(StudyKind::SpaceConvergence),
            "dispersion" => Ok(StudyKind::Dispersion),
            "precond-iterations" => Ok(StudyKind::PrecondIterations),
            "spectrum" => Ok(StudyKind::Spectrum),
            _ => Err(Error::Config {
                reason: format!("unknown study kind '{s}'"),
            }),
        }
    }
}

/// Accepts either a scalar or a list in JSON.
fn one_or_many<'de, D, T>(deserializer: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

fn default_geometry() -> String {
    "unit_interval".into()
}

fn default_k() -> usize {
    2
}

fn default_rho() -> Vec<f64> {
    vec![0.0]
}

/// Default dispersion modes: large j keeps the active band stable at the
/// coarse time step (the system spectrum scales with 1/j^2).
fn default_modes() -> Vec<usize> {
    vec![200, 250, 300, 350, 400]
}

/// One study request. `p`, `rho`, and `tau` accept a scalar or a list.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    #[serde(default = "default_geometry")]
    pub geometry: String,
    #[serde(default, deserialize_with = "one_or_many")]
    pub p: Vec<usize>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub n_sub: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_rho", deserialize_with = "one_or_many")]
    pub rho: Vec<f64>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub tau: Vec<f64>,
    #[serde(rename = "T", default)]
    pub t_final: f64,
    /// Spatial mode numbers for the dispersion study.
    #[serde(default = "default_modes")]
    pub modes: Vec<usize>,
    /// Default CSV destination; the command line may override it.
    #[serde(default)]
    pub out: Option<String>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<StudyConfig> {
        let config: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            reason: format!("config parse error: {e}"),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        Geometry::builtin(&self.geometry)?;
        let fail = |reason: &str| {
            Err(Error::Config {
                reason: reason.to_string(),
            })
        };
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.rho.is_empty() {
            return fail("rho list is empty");
        }
        for &r in &self.rho {
            if !(0.0..1.0).contains(&r) {
                return fail("rho values must lie in [0, 1)");
            }
        }
        let needs_space = !matches!(self.study, StudyKind::Spectrum);
        if needs_space {
            if self.p.is_empty() {
                return fail("p list is empty");
            }
            if self.n_sub.is_empty() {
                return fail("n_sub list is empty");
            }
            if self.p.iter().any(|&p| p == 0) {
                return fail("p must be at least 1");
            }
            if self.n_sub.iter().any(|&n| n == 0) {
                return fail("n_sub must be at least 1");
            }
            if self.tau.is_empty() {
                return fail("tau list is empty");
            }
            if self.tau.iter().any(|&t| !(t > 0.0)) {
                return fail("tau values must be positive");
            }
            if !(self.t_final > 0.0) {
                return fail("T must be positive");
            }
            if self.modes.is_empty() {
                return fail("modes list is empty");
            }
        }
        Ok(())
    }
}

/// Step count and adjusted step hitting T exactly: n = round(T / tau).
fn steps_for(t_final: f64, tau: f64) -> (usize, f64) {
    let n = (t_final / tau).round().max(1.0) as usize;
    (n, t_final / n as f64)
}

/// Least-squares slope of ln(err) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let le: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&le).map(|(x, e)| (x - mx) * (e - me)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Picks the separable reference solution by domain dimension: the
/// standing wave for convergence in time, the forced product wave for
/// curved and multi-patch domains.
fn standing_reference(d: usize) -> Result<ReferenceSolution> {
    match d {
        1 => Ok(ReferenceSolution::standing_interval()),
        2 => Ok(ReferenceSolution::standing_square()),
        _ => Err(Error::Config {
            reason: format!("no standing-wave reference for dimension {d}"),
        }),
    }
}

fn build_space(geometry: &str, p: usize, n_sub: usize) -> Result<MultiPatchSpace> {
    MultiPatchSpace::build(Geometry::builtin(geometry)?, p, n_sub)
}

/// M-inner-product norm of the difference of two free coefficient
/// vectors; equals the L2 norm of the difference of the two fields when
/// both share the boundary lift.
fn mass_norm_diff(mass: &crate::linalg::CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mass.matvec_alloc(&d);
    d.iter().zip(md).map(|(x, y)| x * y).sum::<f64>().sqrt()
}

/// Outcome of one integration cell: final displacement and velocity, or
/// the abort that ended it.
struct CellRun {
    u: Vec<f64>,
    v: Vec<f64>,
    aborted: bool,
}

/// Integrates the discretized problem to T with n steps, catching
/// instability aborts. Solver iteration counts accumulate in `solver`.
fn run_cell(
    problem: &crate::manufactured::DiscreteProblem,
    params: &GenAlphaParams,
    n_steps: usize,
    tau: f64,
    solver: &mut MassSolver,
) -> Result<CellRun> {
    let (u0, v0) = problem.initial_data();
    let mut state = init_state(&problem.system, params, u0, v0, 0.0, tau, solver)?;
    match integrate(&problem.system, params, &mut state, n_steps, solver, None) {
        Ok(()) => Ok(CellRun {
            u: state.y[0].clone(),
            v: state.y[1].clone(),
            aborted: false,
        }),
        Err(Error::Instability { .. }) => Ok(CellRun {
            u: vec![],
            v: vec![],
            aborted: true,
        }),
        Err(e) => Err(e),
    }
}

fn schwarz_solver<'a>(
    space: &MultiPatchSpace,
    system: &'a crate::assembly::SemiDiscreteSystem,
    tol: f64,
) -> Result<MassSolver<'a>> {
    let precond = build_schwarz(space, &system.mass.diagonal(), &system.free_dofs)?;
    Ok(MassSolver::new(&system.mass, MassPrecond::Schwarz(precond)).with_tol(tol))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

// ---------------------------------------------------------------------
// Time convergence
// ---------------------------------------------------------------------

pub struct TimeRow {
    pub tau: f64,
    pub err_u: f64,
    pub err_v: f64,
    pub aborted: bool,
}

pub struct TimeConvergence {
    pub rows: Vec<TimeRow>,
    /// Least-squares slopes over the three finest stable steps.
    pub slope_u: f64,
    pub slope_v: f64,
}

impl TimeConvergence {
    pub fn has_aborts(&self) -> bool {
        self.rows.iter().any(|r| r.aborted)
    }

    /// Columns: tau, err_u_L2, err_v_L2, slope. Aborted rows carry nan
    /// errors; the slope column repeats the displacement slope.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "tau,err_u_L2,err_v_L2,slope")?;
        for r in &self.rows {
            let (eu, ev) = if r.aborted {
                (f64::NAN, f64::NAN)
            } else {
                (r.err_u, r.err_v)
            };
            writeln!(w, "{},{},{},{}", fmt(r.tau), fmt(eu), fmt(ev), fmt(self.slope_u))?;
        }
        Ok(())
    }
}

/// Integrates the standing wave at each configured step size and
/// measures errors at T against a reference run of the same spatial
/// discretization at one eighth of the finest stable step, in the mass
/// norm. That isolates the temporal error: against the exact solution
/// the spatial best-approximation floor would mask the finest steps.
pub fn run_time_convergence(config: &StudyConfig) -> Result<TimeConvergence> {
    config.validate()?;
    let space = build_space(&config.geometry, config.p[0], config.n_sub[0])?;
    let d = space.patch(0).d();
    let reference = standing_reference(d)?;
    let pps = config.p[0] + 2;
    let problem = reference.discretize(&space, pps, RayleighDamping::default())?;
    let params = GenAlphaParams::uniform(config.k, config.rho[0])?;

    let mut taus: Vec<f64> = config.tau.clone();
    taus.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let cells: Vec<(f64, CellRun)> = taus
        .par_iter()
        .map(|&tau| {
            let (n, tau_eff) = steps_for(config.t_final, tau);
            let mut solver = schwarz_solver(&space, &problem.system, STUDY_PCG_TOL)?;
            let run = run_cell(&problem, &params, n, tau_eff, &mut solver)?;
            Ok((tau_eff, run))
        })
        .collect::<Result<_>>()?;

    let finest_stable = cells
        .iter()
        .filter(|(_, run)| !run.aborted)
        .map(|(tau, _)| *tau)
        .fold(f64::INFINITY, f64::min);
    if !finest_stable.is_finite() {
        return Err(Error::Instability {
            t: 0.0,
            ratio: f64::INFINITY,
        });
    }

    let (n_ref, tau_ref) = steps_for(config.t_final, finest_stable / 8.0);
    let mut ref_solver = schwarz_solver(&space, &problem.system, STUDY_PCG_TOL)?;
    let reference_run = run_cell(&problem, &params, n_ref, tau_ref, &mut ref_solver)?;
    if reference_run.aborted {
        return Err(Error::Instability {
            t: config.t_final,
            ratio: f64::INFINITY,
        });
    }

    let mass = &problem.system.mass;
    let rows: Vec<TimeRow> = cells
        .iter()
        .map(|(tau, run)| TimeRow {
            tau: *tau,
            err_u: if run.aborted {
                f64::NAN
            } else {
                mass_norm_diff(mass, &run.u, &reference_run.u)
            },
            err_v: if run.aborted {
                f64::NAN
            } else {
                mass_norm_diff(mass, &run.v, &reference_run.v)
            },
            aborted: run.aborted,
        })
        .collect();

    let stable: Vec<&TimeRow> = rows.iter().filter(|r| !r.aborted).collect();
    let window = &stable[stable.len().saturating_sub(3)..];
    let slope_u = log_log_slope(
        &window.iter().map(|r| (r.tau, r.err_u)).collect::<Vec<_>>(),
    );
    let slope_v = log_log_slope(
        &window.iter().map(|r| (r.tau, r.err_v)).collect::<Vec<_>>(),
    );
    Ok(TimeConvergence {
        rows,
        slope_u,
        slope_v,
    })
}

// ---------------------------------------------------------------------
// Space convergence
// ---------------------------------------------------------------------

pub struct SpaceRow {
    pub n_sub: usize,
    pub p: usize,
    pub rel_err: f64,
    pub slope: f64,
    pub aborted: bool,
}

pub struct SpaceConvergence {
    pub rows: Vec<SpaceRow>,
    /// Per-degree least-squares slopes over the three finest meshes.
    pub slopes: Vec<(usize, f64)>,
}

impl SpaceConvergence {
    pub fn has_aborts(&self) -> bool {
        self.rows.iter().any(|r| r.aborted)
    }

    /// Columns: n_sub, p, rel_err_L2, slope. The slope column repeats
    /// the per-degree slope on each of its rows.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n_sub,p,rel_err_L2,slope")?;
        for r in &self.rows {
            let e = if r.aborted { f64::NAN } else { r.rel_err };
            writeln!(w, "{},{},{},{}", r.n_sub, r.p, fmt(e), fmt(r.slope))?;
        }
        Ok(())
    }
}

/// Forced product wave on the configured geometry over a (p, n_sub)
/// grid; relative L2 error at T against the exact solution. The step is
/// small enough that the spatial error dominates.
pub fn run_space_convergence(config: &StudyConfig) -> Result<SpaceConvergence> {
    config.validate()?;
    let tau = config.tau[0];
    let (n_steps, tau_eff) = steps_for(config.t_final, tau);
    let params = GenAlphaParams::uniform(config.k, config.rho[0])?;

    let cells: Vec<(usize, usize)> = config
        .p
        .iter()
        .flat_map(|&p| config.n_sub.iter().map(move |&n| (p, n)))
        .collect();
    let results: Vec<(usize, usize, f64, bool)> = cells
        .par_iter()
        .map(|&(p, n_sub)| {
            let space = build_space(&config.geometry, p, n_sub)?;
            let d = space.patch(0).d();
            let reference = ReferenceSolution::forced_product(d);
            let problem = reference.discretize(&space, p + 2, RayleighDamping::default())?;
            let mut solver = schwarz_solver(&space, &problem.system, STUDY_PCG_TOL)?;
            let run = run_cell(&problem, &params, n_steps, tau_eff, &mut solver)?;
            if run.aborted {
                return Ok((p, n_sub, f64::NAN, true));
            }
            let t = n_steps as f64 * tau_eff;
            let err =
                displacement_error(&reference, &space, p + 2, &problem.system, &run.u, t)?;
            let norm = exact_norm(&reference, &space, p + 2, t)?;
            Ok((p, n_sub, err / norm, false))
        })
        .collect::<Result<_>>()?;

    let mut slopes = Vec::new();
    let mut rows = Vec::new();
    for &p in &config.p {
        let mut per_p: Vec<(usize, f64, bool)> = results
            .iter()
            .filter(|&&(rp, ..)| rp == p)
            .map(|&(_, n, e, a)| (n, e, a))
            .collect();
        per_p.sort_by_key(|&(n, ..)| n);
        let stable: Vec<(f64, f64)> = per_p
            .iter()
            .filter(|&&(_, _, aborted)| !aborted)
            .map(|&(n, e, _)| (1.0 / n as f64, e))
            .collect();
        let window = &stable[stable.len().saturating_sub(3)..];
        let slope = log_log_slope(window);
        slopes.push((p, slope));
        rows.extend(per_p.into_iter().map(|(n, e, aborted)| SpaceRow {
            n_sub: n,
            p,
            rel_err: e,
            slope,
            aborted,
        }));
    }
    Ok(SpaceConvergence { rows, slopes })
}

// ---------------------------------------------------------------------
// Dispersion
// ---------------------------------------------------------------------

pub struct DispersionRow {
    pub tau: f64,
    pub j: usize,
    pub rho: f64,
    pub err: f64,
    pub aborted: bool,
}

pub struct Dispersion {
    pub rows: Vec<DispersionRow>,
}

impl Dispersion {
    pub fn has_aborts(&self) -> bool {
        self.rows.iter().any(|r| r.aborted)
    }

    /// Columns: tau, j, rho, err_L2. The error is the L2 distance to the
    /// exact solution at the final time.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "tau,j,rho,err_L2")?;
        for r in &self.rows {
            let e = if r.aborted { f64::NAN } else { r.err };
            writeln!(w, "{},{},{},{}", fmt(r.tau), r.j, fmt(r.rho), fmt(e))?;
        }
        Ok(())
    }
}

/// Mode-j waves with speed 1/j on a 1D space: every mode shares the
/// exact period, so the error at the final time measures the scheme's
/// dispersion at that mode's position in the discrete spectrum.
pub fn run_dispersion(config: &StudyConfig) -> Result<Dispersion> {
    config.validate()?;
    let space = build_space(&config.geometry, config.p[0], config.n_sub[0])?;
    if space.patch(0).d() != 1 {
        return Err(Error::Config {
            reason: "dispersion study requires a 1D geometry".into(),
        });
    }
    let pps = config.p[0] + 2;

    let mut cells = Vec::new();
    for &tau in &config.tau {
        for &j in &config.modes {
            for &rho in &config.rho {
                cells.push((tau, j, rho));
            }
        }
    }
    let rows: Vec<DispersionRow> = cells
        .par_iter()
        .map(|&(tau, j, rho)| {
            let reference = ReferenceSolution::dispersion_mode(j);
            let problem = reference.discretize(&space, pps, RayleighDamping::default())?;
            let params = GenAlphaParams::uniform(config.k, rho)?;
            let (n_steps, tau_eff) = steps_for(config.t_final, tau);
            let mut solver = schwarz_solver(&space, &problem.system, STUDY_PCG_TOL)?;
            let run = run_cell(&problem, &params, n_steps, tau_eff, &mut solver)?;
            let err = if run.aborted {
                f64::NAN
            } else {
                let t = n_steps as f64 * tau_eff;
                displacement_error(&reference, &space, pps, &problem.system, &run.u, t)?
            };
            Ok(DispersionRow {
                tau: tau_eff,
                j,
                rho,
                err,
                aborted: run.aborted,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dispersion { rows })
}

// ---------------------------------------------------------------------
// Preconditioner iterations
// ---------------------------------------------------------------------

pub struct PrecondRow {
    pub geometry: String,
    pub p: usize,
    pub n_sub: usize,
    pub mean_iters: f64,
}

pub struct PrecondIterations {
    pub rows: Vec<PrecondRow>,
}

impl PrecondIterations {
    pub fn has_aborts(&self) -> bool {
        false
    }

    /// Columns: geometry, p, n_sub, mean_iters.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "geometry,p,n_sub,mean_iters")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.geometry,
                r.p,
                r.n_sub,
                fmt(r.mean_iters)
            )?;
        }
        Ok(())
    }
}

/// Integrates the forced product wave for the configured horizon and
/// reports the mean PCG iteration count per mass solve (tolerance 1e-12,
/// zero initial guess) across all solves of the run.
pub fn run_precond_iterations(config: &StudyConfig) -> Result<PrecondIterations> {
    config.validate()?;
    let tau = config.tau[0];
    let (n_steps, tau_eff) = steps_for(config.t_final, tau);
    let params = GenAlphaParams::uniform(config.k, config.rho[0])?;

    let cells: Vec<(usize, usize)> = config
        .p
        .iter()
        .flat_map(|&p| config.n_sub.iter().map(move |&n| (p, n)))
        .collect();
    let rows: Vec<PrecondRow> = cells
        .par_iter()
        .map(|&(p, n_sub)| {
            let space = build_space(&config.geometry, p, n_sub)?;
            let d = space.patch(0).d();
            let reference = ReferenceSolution::forced_product(d);
            let problem = reference.discretize(&space, p + 2, RayleighDamping::default())?;
            let mut solver = schwarz_solver(&space, &problem.system, 1e-12)?;
            let run = run_cell(&problem, &params, n_steps, tau_eff, &mut solver)?;
            if run.aborted {
                return Err(Error::Instability {
                    t: config.t_final,
                    ratio: f64::INFINITY,
                });
            }
            Ok(PrecondRow {
                geometry: config.geometry.clone(),
                p,
                n_sub,
                mean_iters: solver.mean_iterations(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PrecondIterations { rows })
}

// ---------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------

pub struct SpectrumRow {
    pub rho: f64,
    pub theta: f64,
    pub radius: f64,
    pub theta_max: f64,
}

pub struct Spectrum {
    pub rows: Vec<SpectrumRow>,
}

impl Spectrum {
    pub fn has_aborts(&self) -> bool {
        false
    }

    /// Columns: rho, theta, spectral_radius, theta_max. theta_max is the
    /// numeric stability limit, constant along each rho curve.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "rho,theta,spectral_radius,theta_max")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                fmt(r.rho),
                fmt(r.theta),
                fmt(r.radius),
                fmt(r.theta_max)
            )?;
        }
        Ok(())
    }
}

/// Spectral-radius curves over Theta for each dissipation target, each
/// swept to 5% past its own numeric stability limit.
pub fn run_spectrum(config: &StudyConfig) -> Result<Spectrum> {
    const GRID: usize = 240;
    let mut rows = Vec::new();
    for &rho in &config.rho {
        let params = GenAlphaParams::uniform(config.k, rho)?;
        let theta_max = find_stability(&params).theta_max;
        let thetas: Vec<f64> = (0..=GRID)
            .map(|i| 1.05 * theta_max * i as f64 / GRID as f64)
            .collect();
        for sample in spectrum_sweep(&params, &thetas) {
            rows.push(SpectrumRow {
                rho,
                theta: sample.theta,
                radius: sample.rho,
                theta_max,
            });
        }
    }
    Ok(Spectrum { rows })
}

// ---------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------

/// Runs the configured study and writes its CSV to `out`. Returns true
/// when any cell aborted on instability.
pub fn run_study<W: Write>(config: &StudyConfig, out: &mut W) -> Result<bool> {
    let aborted = match config.study {
        StudyKind::TimeConvergence => {
            let r = run_time_convergence(config)?;
            r.to_csv(out).map_err(Error::from)?;
            r.has_aborts()
        }
        StudyKind::SpaceConvergence => {
            let r = run_space_convergence(config)?;
            r.to_csv(out).map_err(Error::from)?;
            r.has_aborts()
        }
        StudyKind::Dispersion => {
            let r = run_dispersion(config)?;
            r.to_csv(out).map_err(Error::from)?;
            r.has_aborts()
        }
        StudyKind::PrecondIterations => {
            let r = run_precond_iterations(config)?;
            r.to_csv(out).map_err(Error::from)?;
            r.has_aborts()
        }
        StudyKind::Spectrum => {
            let r = run_spectrum(config)?;
            r.to_csv(out).map_err(Error::from)?;
            r.has_aborts()
        }
    };
    Ok(aborted)
}
