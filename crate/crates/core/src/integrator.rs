//! Explicit generalized-alpha time integrators of order 2k for
//! M u'' + C u' + K u = F(t). A method of order 2k carries 3k state
//! vectors (displacement, velocity, acceleration, and 3k-3 auxiliary
//! acceleration derivatives) and performs exactly k preconditioned mass
//! solves per step. Dissipation is controlled per block by spectral
//! radii (rho_b, rho_s) with 0 <= rho_s <= rho_b < 1.

use crate::assembly::SemiDiscreteSystem;
use crate::error::{Error, Result};
use crate::linalg::{pcg, CsrMatrix};
use crate::precond::{SchwarzPrecond, SinglePatchPrecond};

/// Parameters of one 3x3 block of the scheme.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub rho_b: f64,
    pub rho_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// 1 for the leading blocks, 0 for the last block.
    pub alpha_f: f64,
}

/// Full parameter set of the order-2k scheme: one block per mass solve.
#[derive(Debug, Clone)]
pub struct GenAlphaParams {
    pub k: usize,
    pub blocks: Vec<BlockParams>,
}

impl GenAlphaParams {
    /// One-parameter family: rho_b = rho_s = rho in every block.
    pub fn uniform(k: usize, rho: f64) -> Result<Self> {
        compute_params(k, &vec![rho; k], &vec![rho; k])
    }
}

/// Closed-form block parameters. The leading blocks (j < k) take
/// alpha_f = 1, the final block alpha_f = 0; gamma = 1/2 - alpha_f +
/// alpha in every block.
pub fn compute_params(k: usize, rho_b: &[f64], rho_s: &[f64]) -> Result<GenAlphaParams> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k".into(),
            reason: "order index must be at least 1".into(),
        });
    }
    if rho_b.len() != k || rho_s.len() != k {
        return Err(Error::InvalidParameter {
            name: "rho".into(),
            reason: format!("expected {k} dissipation pairs, got {}/{}", rho_b.len(), rho_s.len()),
        });
    }
    let mut blocks = Vec::with_capacity(k);
    for j in 1..=k {
        let (b, s) = (rho_b[j - 1], rho_s[j - 1]);
        if !(0.0..1.0).contains(&b) || !(0.0..1.0).contains(&s) || s > b {
            return Err(Error::InvalidParameter {
                name: "rho".into(),
                reason: format!("block {j} needs 0 <= rho_s <= rho_b < 1, got ({b}, {s})"),
            });
        }
        let last = j == k;
        let (alpha, beta) = if last {
            let alpha = (2.0 + (1.0 - b) * s) / ((1.0 + b) * (1.0 + s));
            let beta = (-5.0 - 3.0 * b - 4.0 * s + 2.0 * b * s + 2.0 * b * b * s - s * s
                + b * s * s)
                / ((1.0 + b).powi(2) * (-2.0 - 3.0 * s + b * s - s * s + b * s * s));
            (alpha, beta)
        } else {
            let alpha = (2.0 - (1.0 + b) * s) / ((-1.0 + b) * (-1.0 + s));
            let beta = (1.0 + b) * (-1.0 + b * s).powi(2)
                / ((-1.0 + b).powi(2) * (-1.0 + s) * (-2.0 + s + b * s));
            (alpha, beta)
        };
        let alpha_f = if last { 0.0 } else { 1.0 };
        // gamma - alpha + alpha_f must be exactly 1/2 in floating point.
        // c is +-1/2 exactly; after rounding gamma = alpha + c, alpha is
        // snapped to gamma - c (exact: same or lower binade), which makes
        // gamma - alpha reproduce c bitwise via Sterbenz's lemma.
        let c = 0.5 - alpha_f;
        let gamma = alpha + c;
        let alpha = gamma - c;
        blocks.push(BlockParams {
            rho_b: b,
            rho_s: s,
            alpha,
            beta,
            gamma,
            alpha_f,
        });
    }
    Ok(GenAlphaParams { k, blocks })
}

/// Preconditioner dispatch for the mass solver.
pub enum MassPrecond {
    Identity,
    Jacobi(Vec<f64>),
    Single(SinglePatchPrecond),
    Schwarz(SchwarzPrecond),
}

impl MassPrecond {
    pub fn jacobi_of(mass: &CsrMatrix) -> Self {
        MassPrecond::Jacobi(mass.diagonal())
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            MassPrecond::Identity => out.copy_from_slice(v),
            MassPrecond::Jacobi(d) => {
                for i in 0..v.len() {
                    out[i] = v[i] / d[i];
                }
            }
            MassPrecond::Single(p) => p.apply_inverse(v, out),
            MassPrecond::Schwarz(p) => p.apply_inverse(v, out),
        }
    }
}

/// Instrumented PCG mass solver: counts solves and per-solve iterations
/// so a step can be audited for its solve budget.
pub struct MassSolver<'a> {
    mass: &'a CsrMatrix,
    precond: MassPrecond,
    tol: f64,
    max_iter: usize,
    iterations: Vec<usize>,
}

impl<'a> MassSolver<'a> {
    pub fn new(mass: &'a CsrMatrix, precond: MassPrecond) -> Self {
        MassSolver {
            mass,
            precond,
            tol: 1e-12,
            max_iter: 2000,
            iterations: Vec::new(),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Solves M x = b from a zero initial guess.
    pub fn solve(&mut self, b: &[f64]) -> Result<Vec<f64>> {
        let apply_a = |v: &[f64], out: &mut [f64]| self.mass.matvec(v, out);
        let precond = &self.precond;
        let apply_pinv = |v: &[f64], out: &mut [f64]| precond.apply(v, out);
        let (x, report) = pcg(&apply_a, &apply_pinv, b, None, self.tol, self.max_iter);
        if !report.converged {
            return Err(Error::PcgNoConvergence {
                iterations: report.iterations,
                residual: report.relative_residual,
            });
        }
        self.iterations.push(report.iterations);
        Ok(x)
    }

    pub fn solve_count(&self) -> usize {
        self.iterations.len()
    }

    pub fn iteration_counts(&self) -> &[usize] {
        &self.iterations
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }
}

/// State of a order-2k run: y[m] holds the m-th chain vector
/// (displacement, velocity, acceleration, then auxiliary acceleration
/// derivatives), unscaled.
#[derive(Debug, Clone)]
pub struct IntegratorState {
    pub t: f64,
    pub tau: f64,
    pub y: Vec<Vec<f64>>,
}

impl IntegratorState {
    pub fn displacement(&self) -> &[f64] {
        &self.y[0]
    }

    pub fn velocity(&self) -> &[f64] {
        &self.y[1]
    }

    /// The scaled state (tau^m y_m), the coordinates in which one step
    /// acts as the amplification matrix.
    pub fn scaled(&self) -> Vec<Vec<f64>> {
        self.y
            .iter()
            .enumerate()
            .map(|(m, v)| {
                let s = self.tau.powi(m as i32);
                v.iter().map(|x| s * x).collect()
            })
            .collect()
    }
}

fn factorial(a: usize) -> f64 {
    (1..=a).map(|i| i as f64).product()
}

/// Initial state from displacement and velocity: the acceleration chain
/// is filled by repeated mass solves of the differentiated equation,
/// y_{a+2} = M^{-1}(F^(a)(t0) - K y_a - C y_{a+1}), a = 0..3k-3.
pub fn init_state(
    system: &SemiDiscreteSystem,
    params: &GenAlphaParams,
    u0: Vec<f64>,
    v0: Vec<f64>,
    t0: f64,
    tau: f64,
    solver: &mut MassSolver,
) -> Result<IntegratorState> {
    let n = system.n_free();
    if u0.len() != n || v0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u0.len().max(v0.len()),
        });
    }
    let chain = 3 * params.k;
    let mut y = Vec::with_capacity(chain);
    y.push(u0);
    y.push(v0);
    for a in 0..=(chain - 3) {
        let mut rhs = system.force(t0, a);
        let ku = system.stiffness.matvec_alloc(&y[a]);
        for (r, v) in rhs.iter_mut().zip(ku) {
            *r -= v;
        }
        if let Some(c) = &system.damping {
            let cv = c.matvec_alloc(&y[a + 1]);
            for (r, v) in rhs.iter_mut().zip(cv) {
                *r -= v;
            }
        }
        let next = solver.solve(&rhs).map_err(|e| Error::Initialization {
            order: a,
            source: Box::new(e),
        })?;
        y.push(next);
    }
    Ok(IntegratorState { t: t0, tau, y })
}

/// Taylor order of block j's displacement predictor (j 1-based, j < k).
/// Order 2k - 1 caps the predictor's local error at O(tau^2k), which the
/// chain update needs for global order 2k; deeper blocks cap at the top
/// of the derivative chain. At k = 2 this is the familiar cubic.
pub fn predictor_order(k: usize, j: usize) -> usize {
    (2 * k - 1).min(3 * (k - j) + 2)
}

/// One step: k mass solves, each against right-hand sides formed from
/// the current state only, then a Taylor-chain update of all 3k vectors.
pub fn step(
    system: &SemiDiscreteSystem,
    params: &GenAlphaParams,
    state: &mut IntegratorState,
    solver: &mut MassSolver,
) -> Result<()> {
    let k = params.k;
    let chain = 3 * k;
    let n = system.n_free();
    let tau = state.tau;
    let t = state.t;

    // Block solves P_j, all from the state at time n.
    let mut corrections: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 1..=k {
        let block = &params.blocks[j - 1];
        let m0 = 3 * (j - 1);
        let s = block.alpha_f;

        // Stiffness acts on a Taylor displacement predictor at
        // t + alpha_f tau, long enough to sustain order 2k.
        let mut pred = state.y[m0].clone();
        if s != 0.0 {
            for a in 1..=predictor_order(k, j) {
                let coef = (s * tau).powi(a as i32) / factorial(a);
                for (p, v) in pred.iter_mut().zip(&state.y[m0 + a]) {
                    *p += coef * v;
                }
            }
        }
        // Taylor extrapolation of the block's solve vector.
        let mut taylor_s = vec![0.0; n];
        for a in 0..=(3 * (k - j)) {
            let coef = tau.powi(a as i32) / factorial(a);
            for (ts, v) in taylor_s.iter_mut().zip(&state.y[m0 + 2 + a]) {
                *ts += coef * v;
            }
        }

        let mut rhs = system.force(t + s * tau, m0);
        let kp = system.stiffness.matvec_alloc(&pred);
        let ms = system.mass.matvec_alloc(&taylor_s);
        for i in 0..n {
            rhs[i] -= kp[i] + ms[i];
        }
        if let Some(c) = &system.damping {
            let cv = c.matvec_alloc(&state.y[m0 + 1]);
            for (r, v) in rhs.iter_mut().zip(cv) {
                *r -= v;
            }
        }
        let z = solver.solve(&rhs).map_err(|e| Error::StepFailure {
            block: j,
            source: Box::new(e),
        })?;
        corrections.push(z.iter().map(|v| v / block.alpha).collect());
    }

    // Chain update: Taylor shift plus the block correction.
    let mut new_y = Vec::with_capacity(chain);
    for m in 0..chain {
        let j = m / 3;
        let block = &params.blocks[j];
        let c_m = match m % 3 {
            0 => block.beta * tau * tau,
            1 => block.gamma * tau,
            _ => 1.0,
        };
        let mut v = vec![0.0; n];
        for a in 0..=(chain - 1 - m) {
            let coef = tau.powi(a as i32) / factorial(a);
            for (o, x) in v.iter_mut().zip(&state.y[m + a]) {
                *o += coef * x;
            }
        }
        for (o, p) in v.iter_mut().zip(&corrections[j]) {
            *o += c_m * p;
        }
        new_y.push(v);
    }
    state.y = new_y;
    state.t = t + tau;
    Ok(())
}

/// Kinetic plus strain energy, 0.5 (v' M v + u' K u).
pub fn energy(system: &SemiDiscreteSystem, state: &IntegratorState) -> f64 {
    let mv = system.mass.matvec_alloc(state.velocity());
    let ku = system.stiffness.matvec_alloc(state.displacement());
    let kin: f64 = state.velocity().iter().zip(mv).map(|(a, b)| a * b).sum();
    let pot: f64 = state.displacement().iter().zip(ku).map(|(a, b)| a * b).sum();
    0.5 * (kin + pot)
}

/// Runs n_steps steps, invoking the observer after each one. Aborts with
/// an instability error when the displacement grows a factor 1e6 beyond
/// its initial magnitude.
pub fn integrate(
    system: &SemiDiscreteSystem,
    params: &GenAlphaParams,
    state: &mut IntegratorState,
    n_steps: usize,
    solver: &mut MassSolver,
    mut observer: Option<&mut dyn FnMut(usize, &IntegratorState)>,
) -> Result<()> {
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let reference = 1.0 + sup(state.displacement());
    for n in 0..n_steps {
        step(system, params, state, solver)?;
        let u = sup(state.displacement());
        if !u.is_finite() || u > 1e6 * reference {
            return Err(Error::Instability {
                t: state.t,
                ratio: u / reference,
            });
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(n, state);
        }
    }
    Ok(())
}

/// Largest stable Theta = tau^2 lambda of the parameter set (numeric,
/// minimum over blocks).
pub fn stability_limit(params: &GenAlphaParams) -> f64 {
    crate::spectral::find_stability(params).theta_max
}

/// CFL bound tau <= sqrt(Theta_max / lambda_max).
pub fn cfl_timestep(theta_max: f64, lambda_max: f64) -> f64 {
    (theta_max / lambda_max).sqrt()
}
