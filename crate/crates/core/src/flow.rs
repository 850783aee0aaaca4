//! Backward-Euler time stepping of `u̇ = log det(u_{αβ̄}) − A u + f` with a
//! damped Newton iteration, and the decreasing sequence of smooth problems
//! that approximates a flow with singular initial data.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    build_grid, decode, hessian_at, linearization_weights, DomainSpec, Grid, ScalarField, Slot, DEFAULT_DELTA,
};
use crate::initial::{
    boundary_ramp, ramp_schedule, BoundaryRamp, MollifiedPotential, RampParams, SingularPotential,
};
use crate::linalg::{bicgstab, norm_inf, pcg, Csr, KrylovParams};
use crate::{abs2, FnOf, SpaceTimeFn};

/// Largest admissible time step.
pub const MAX_DT: f64 = 0.1;

#[derive(Clone)]
pub enum InitialData {
    Smooth(Arc<dyn SpaceTimeFn>),
    Singular(SingularPotential),
}

#[derive(Clone)]
pub struct FlowProblem {
    pub domain: DomainSpec,
    pub a: f64,
    pub t_end: f64,
    pub forcing: Arc<dyn SpaceTimeFn>,
    pub boundary: Arc<dyn SpaceTimeFn>,
    pub initial: InitialData,
}

impl std::fmt::Debug for FlowProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowProblem")
            .field("domain", &self.domain)
            .field("a", &self.a)
            .field("t_end", &self.t_end)
            .finish_non_exhaustive()
    }
}

impl FlowProblem {
    pub fn n(&self) -> usize {
        self.domain.n
    }

    /// Value of the initial data, clipped for singular potentials.
    pub fn u0(&self, x: &[f64]) -> f64 {
        match &self.initial {
            InitialData::Smooth(f) => f.eval(x, 0.0),
            InitialData::Singular(p) => p.eval(x, 0.0),
        }
    }

    /// Largest `|u₀ − φ(·, 0)|` over the boundary crossings of `g`.
    pub fn boundary_mismatch(&self, g: &Grid) -> f64 {
        let d = g.dim();
        g.crossings
            .iter()
            .map(|c| (self.u0(&c.point[..d]) - self.boundary.eval(&c.point[..d], 0.0)).abs())
            .fold(0.0, f64::max)
    }

    fn with_data(&self, boundary: Arc<dyn SpaceTimeFn>, initial: InitialData) -> Self {
        FlowProblem {
            boundary,
            initial,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSchedule {
    pub dt: f64,
    pub steps: usize,
    /// Steps between stored snapshots.
    pub stride: usize,
}

impl TimeSchedule {
    pub fn covering(dt: f64, t_end: f64, stride: usize) -> Self {
        TimeSchedule {
            dt,
            steps: (t_end / dt + 1e-9).floor() as usize,
            stride,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonParams {
    /// Target for the sup norm of the step residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step length of the line search.
    pub damping: f64,
    /// Eigenvalue floor.
    pub delta: f64,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            tol: 1e-9,
            max_iter: 30,
            damping: 1.0,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
    pub clamp_count: usize,
    /// Backward-Euler solves used for this step (1 unless refined).
    pub substeps: usize,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl FlowState {
    pub fn last(&self) -> &ScalarField {
        self.fields.last().expect("a flow state holds at least its initial slice")
    }

    /// Index of the snapshot closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

struct Residual {
    g: Vec<f64>,
    /// Sup norm of `g`.
    norm: f64,
    /// Sup norm of `g` in excess of its rounding floor; convergence and the
    /// line search use this.
    excess: f64,
    clamps: usize,
}

/// Residual of the step equation at the unknowns.
///
/// Rows whose eigenvalues sit below the floor carry the slope `1/δ` of the
/// extended log det, which multiplies the rounding error of the second
/// differences. Each row gets a floor `64·ε·dt·L'·(|u_p| + 1)/h²` below
/// which its residual counts as zero; elsewhere the floor is far under
/// any practical tolerance.
fn residual(
    grid: &Grid,
    u: &ScalarField,
    u_prev: &[f64],
    f_next: &[f64],
    a: f64,
    dt: f64,
    delta: f64,
) -> Residual {
    let n = grid.n();
    let noise = 64.0 * f64::EPSILON * dt / (grid.h * grid.h);
    let parts: Vec<(f64, f64, usize)> = (0..grid.unknowns())
        .into_par_iter()
        .map(|p| {
            let c = hessian_at(grid, u, p).extended(n, delta);
            let up = u.values[grid.node_of[p]];
            let g = up - dt * (c.logdet - a * up + f_next[p]) - u_prev[p];
            let floor = noise * (up.abs() + 1.0) / c.min_eig.max(delta);
            (g, floor, c.clamps)
        })
        .collect();
    let clamps = parts.iter().map(|x| x.2).sum();
    let finite = parts.iter().all(|x| x.0.is_finite());
    let excess = if finite {
        parts.iter().map(|x| (x.0.abs() - x.1).max(0.0)).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let g: Vec<f64> = parts.into_iter().map(|x| x.0).collect();
    let norm = if finite { norm_inf(&g) } else { f64::INFINITY };
    Residual { g, norm, excess, clamps }
}

/// Newton matrix of the step residual.
///
/// For n = 1 with no clamped node, row `p` is divided by `dt·c_p`, making the
/// matrix symmetric positive definite; the returned scales must be applied
/// to the right-hand side. Otherwise rows are left unscaled and the flag is
/// false.
///
/// With `dtrace`, the last component is the first-order change of the
/// residual caused by moving the boundary trace by `dtrace`.
fn jacobian(
    grid: &Grid,
    u: &ScalarField,
    a: f64,
    dt: f64,
    delta: f64,
    dtrace: Option<&[f64]>,
) -> (Csr, Vec<f64>, bool, Vec<f64>) {
    let n = grid.n();
    let ih2 = 1.0 / (grid.h * grid.h);
    let weights: Vec<[f64; 8]> = (0..grid.unknowns())
        .into_par_iter()
        .map(|p| linearization_weights(n, &hessian_at(grid, u, p).extended(n, delta).grad))
        .collect();
    let symmetric = n == 1 && weights.iter().all(|c| c[0] > 0.0);
    let pat = &grid.pattern;
    let mut vals = vec![0.0; pat.cols.len()];
    let mut scales = Vec::with_capacity(weights.len());
    let mut moved = vec![0.0; weights.len()];
    let per = grid.slots(0).len();
    let mut w = vec![0.0; per];
    for (p, c) in weights.iter().enumerate() {
        // Weight of each slot in the linearized log det, and of the center.
        w.iter_mut().for_each(|v| *v = 0.0);
        let mut center = 0.0;
        for ax in 0..grid.dim() {
            w[2 * ax] += c[ax] * ih2;
            w[2 * ax + 1] += c[ax] * ih2;
            center -= 2.0 * c[ax] * ih2;
        }
        if n == 2 {
            for q in 0..4 {
                let s = 8 + 4 * q;
                let cq = 0.25 * c[4 + q] * ih2;
                w[s] += cq;
                w[s + 1] -= cq;
                w[s + 2] -= cq;
                w[s + 3] += cq;
            }
        }
        let scale = if symmetric { 1.0 / (dt * c[0]) } else { 1.0 };
        let mut diag = 1.0 + a * dt - dt * center;
        let entries = &pat.slot_entry[p * per..(p + 1) * per];
        for (s, &slot) in grid.slots(p).iter().enumerate() {
            match decode(slot) {
                Slot::Unknown => vals[entries[s] as usize] = -dt * w[s] * scale,
                Slot::Crossing(ci) => {
                    let theta = grid.crossings[ci].theta;
                    diag -= dt * w[s] * (1.0 - 1.0 / theta);
                    if let Some(d) = dtrace {
                        moved[p] -= dt * w[s] * d[ci] / theta;
                    }
                }
            }
        }
        vals[pat.diag_entry[p] as usize] = diag * scale;
        scales.push(scale);
    }
    let csr = Csr {
        n: weights.len(),
        row_ptr: pat.row_ptr.clone(),
        cols: pat.cols.clone(),
        vals,
    };
    (csr, scales, symmetric, moved)
}

/// Exterior nodes and their radial projections onto the boundary.
struct Exterior {
    nodes: Vec<usize>,
    points: Vec<[f64; 4]>,
}

impl Exterior {
    fn of(grid: &Grid) -> Self {
        let nodes: Vec<usize> = (0..grid.node_count()).filter(|&i| !grid.is_interior(i)).collect();
        let points = nodes.iter().map(|&i| grid.spec.project(&grid.coords(i))).collect();
        Exterior { nodes, points }
    }

    fn fill(&self, grid: &Grid, u: &mut ScalarField, boundary: &dyn SpaceTimeFn, t: f64) {
        let d = grid.dim();
        let vals: Vec<f64> = self.points.par_iter().map(|x| boundary.eval(&x[..d], t)).collect();
        for (&i, v) in self.nodes.iter().zip(vals) {
            u.values[i] = v;
        }
    }
}

/// One backward-Euler step: solves
/// `u − dt·(log det H(u) − A u + f(·, t_next)) = u_prev` at the unknowns
/// with `u = φ(·, t_next)` on the boundary.
///
/// Exterior node values of the result are left as in `u_prev`; trace values
/// are those of the new time.
pub fn implicit_step(
    grid: &Grid,
    prob: &FlowProblem,
    u_prev: &ScalarField,
    t_next: f64,
    dt: f64,
    np: &NewtonParams,
) -> Result<(ScalarField, StepDiagnostics)> {
    hinted_step(grid, prob, u_prev, t_next, dt, np, None)
}

/// [`implicit_step`] with an expected increment over the step, used as the
/// Krylov starting point of the predictor.
fn hinted_step(
    grid: &Grid,
    prob: &FlowProblem,
    u_prev: &ScalarField,
    t_next: f64,
    dt: f64,
    np: &NewtonParams,
    hint: Option<&[f64]>,
) -> Result<(ScalarField, StepDiagnostics)> {
    if !(dt > 0.0) || dt > MAX_DT {
        return Err(Error::StepTooLarge(dt));
    }
    let d = grid.dim();
    let prev = u_prev.interior(grid);
    let prev_min = min_eigenvalues(grid, u_prev, np.delta);
    let f_next: Vec<f64> = grid
        .node_of
        .par_iter()
        .map(|&i| prob.forcing.eval(&grid.coords(i)[..d], t_next))
        .collect();
    let mut u = u_prev.clone();
    u.time = t_next;
    u.trace = Some(grid.sample_trace(prob.boundary.as_ref(), t_next));
    let krylov = KrylovParams::default();
    let mut linear_iterations = 0;
    let plain: Vec<f64> = prev.iter().map(|v| v / (1.0 + prob.a * dt)).collect();
    u.set_interior(grid, &plain);
    let mut res = residual(grid, &u, &prev, &f_next, prob.a, dt, np.delta);
    // Linearly implicit predictor about the previous slice, including the
    // motion of the boundary trace. It keeps nodes next to a fast-moving
    // boundary inside the cone, where the plain guess can throw them out.
    if let (Some(tr_old), Some(tr_new)) = (u_prev.trace.as_ref(), u.trace.as_ref()) {
        let dtr: Vec<f64> = tr_new.iter().zip(tr_old).map(|(a, b)| a - b).collect();
        let (jac, scale, symmetric, moved) = jacobian(grid, u_prev, prob.a, dt, np.delta, Some(&dtr));
        let g0 = residual(grid, u_prev, &prev, &f_next, prob.a, dt, np.delta).g;
        let rhs: Vec<f64> = (0..g0.len()).map(|p| -(g0[p] + moved[p]) * scale[p]).collect();
        let mut w = hint.map_or_else(|| vec![0.0; rhs.len()], <[f64]>::to_vec);
        let stats = if symmetric {
            pcg(&jac, &rhs, &mut w, krylov)
        } else {
            bicgstab(&jac, &rhs, &mut w, krylov)
        };
        if let Ok(stats) = stats {
            linear_iterations += stats.iterations;
            let trial: Vec<f64> = prev.iter().zip(&w).map(|(a, b)| a + b).collect();
            let mut cand = u.clone();
            cand.set_interior(grid, &trial);
            let r = residual(grid, &cand, &prev, &f_next, prob.a, dt, np.delta);
            if r.excess < res.excess {
                u = cand;
                res = r;
            }
        }
    }
    for it in 0..np.max_iter {
        if res.excess <= np.tol {
            return finish(grid, u, res, it, linear_iterations, t_next, np, &prev_min);
        }
        let (jac, scale, symmetric, _) = jacobian(grid, &u, prob.a, dt, np.delta, None);
        let rhs: Vec<f64> = res.g.iter().zip(&scale).map(|(g, s)| -g * s).collect();
        let mut step = vec![0.0; rhs.len()];
        let stats = if symmetric {
            pcg(&jac, &rhs, &mut step, krylov)?
        } else {
            bicgstab(&jac, &rhs, &mut step, krylov)?
        };
        linear_iterations += stats.iterations;

        let base = u.interior(grid);
        let mut lambda = np.damping;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = base.iter().zip(&step).map(|(b, s)| b + lambda * s).collect();
            let mut cand = u.clone();
            cand.set_interior(grid, &trial);
            let r = residual(grid, &cand, &prev, &f_next, prob.a, dt, np.delta);
            if r.excess < res.excess {
                u = cand;
                res = r;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations: it + 1,
                residual: res.norm,
            });
        }
    }
    if res.excess <= np.tol {
        return finish(grid, u, res, np.max_iter, linear_iterations, t_next, np, &prev_min);
    }
    Err(Error::NewtonDiverged {
        iterations: np.max_iter,
        residual: res.norm,
    })
}

fn min_eigenvalues(grid: &Grid, u: &ScalarField, delta: f64) -> Vec<f64> {
    let n = grid.n();
    (0..grid.unknowns())
        .into_par_iter()
        .map(|p| hessian_at(grid, u, p).extended(n, delta).min_eig)
        .collect()
}

/// Accept a converged iterate unless a node that was inside the psh cone
/// in the previous slice has left it. Nodes that start outside (the
/// truncation error of a steep log tail) are repaired by the flow itself.
#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &Grid,
    u: ScalarField,
    res: Residual,
    iterations: usize,
    linear_iterations: usize,
    t: f64,
    np: &NewtonParams,
    prev_min: &[f64],
) -> Result<(ScalarField, StepDiagnostics)> {
    let floor = -10.0 * np.delta;
    let now = min_eigenvalues(grid, &u, np.delta);
    if let Some(p) = (0..now.len()).find(|&p| now[p] < floor && prev_min[p] >= floor) {
        return Err(Error::NotPsh {
            node: grid.node_of[p],
            eigenvalue: now[p],
        });
    }
    Ok((
        u,
        StepDiagnostics {
            t,
            newton_iterations: iterations,
            linear_iterations,
            residual: res.norm,
            clamp_count: res.clamps,
            substeps: 1,
        },
    ))
}

fn check_schedule(prob: &FlowProblem, sched: &TimeSchedule) -> Result<()> {
    if !(sched.dt > 0.0) || sched.dt > MAX_DT {
        return Err(Error::StepTooLarge(sched.dt));
    }
    if sched.horizon() > prob.t_end * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "schedule horizon {} exceeds T = {}",
            sched.horizon(),
            prob.t_end
        )));
    }
    if sched.stride == 0 {
        return Err(Error::InvalidArgument("snapshot stride must be at least 1".into()));
    }
    Ok(())
}

/// Halvings allowed when a step fails to converge.
const MAX_REFINE: u32 = 6;

/// [`implicit_step`], retried as two half steps when Newton or the linear
/// solver fails. Steep transients (a pole being repaired, a boundary ramp)
/// are handled locally in time without shrinking the global schedule.
#[allow(clippy::too_many_arguments)]
fn step_with_refinement(
    grid: &Grid,
    prob: &FlowProblem,
    u_prev: &ScalarField,
    t_next: f64,
    dt: f64,
    np: &NewtonParams,
    hint: Option<&[f64]>,
    depth: u32,
) -> Result<(ScalarField, StepDiagnostics)> {
    match hinted_step(grid, prob, u_prev, t_next, dt, np, hint) {
        Err(Error::NewtonDiverged { .. } | Error::LinearSolver { .. }) if depth > 0 => {
            let half = 0.5 * dt;
            let (mid, d1) = step_with_refinement(grid, prob, u_prev, t_next - half, half, np, None, depth - 1)?;
            let (end, d2) = step_with_refinement(grid, prob, &mid, t_next, half, np, None, depth - 1)?;
            Ok((
                end,
                StepDiagnostics {
                    t: t_next,
                    newton_iterations: d1.newton_iterations + d2.newton_iterations,
                    linear_iterations: d1.linear_iterations + d2.linear_iterations,
                    residual: d2.residual,
                    clamp_count: d1.clamp_count.max(d2.clamp_count),
                    substeps: d1.substeps + d2.substeps,
                },
            ))
        }
        other => other,
    }
}

/// Time-march from a prepared initial slice (nodal values plus trace).
pub fn solve_from(
    grid: &Grid,
    prob: &FlowProblem,
    u0: ScalarField,
    sched: &TimeSchedule,
    np: &NewtonParams,
) -> Result<FlowState> {
    check_schedule(prob, sched)?;
    let exterior = Exterior::of(grid);
    let mut state = FlowState {
        times: vec![0.0],
        fields: vec![u0.clone()],
        diagnostics: Vec::with_capacity(sched.steps),
    };
    let mut u = u0;
    let mut increment: Option<Vec<f64>> = None;
    for step in 1..=sched.steps {
        let t = step as f64 * sched.dt;
        let (next, diag) =
            step_with_refinement(grid, prob, &u, t, sched.dt, np, increment.as_deref(), MAX_REFINE)?;
        increment = Some(
            grid.node_of
                .iter()
                .map(|&i| next.values[i] - u.values[i])
                .collect(),
        );
        u = next;
        state.diagnostics.push(diag);
        if step % sched.stride == 0 || step == sched.steps {
            let mut snap = u.clone();
            exterior.fill(grid, &mut snap, prob.boundary.as_ref(), t);
            state.times.push(t);
            state.fields.push(snap);
        }
    }
    Ok(state)
}

/// Initial slice of a smooth problem: nodal samples with the boundary trace.
pub fn initial_slice(grid: &Grid, f: &dyn SpaceTimeFn) -> ScalarField {
    grid.sample(f, 0.0, true)
}

/// Solve a problem with smooth initial data.
pub fn solve_flow(grid: &Grid, prob: &FlowProblem, sched: &TimeSchedule, np: &NewtonParams) -> Result<FlowState> {
    let InitialData::Smooth(f) = &prob.initial else {
        return Err(Error::WrongRegime(
            "singular initial data must go through the approximating sequence".into(),
        ));
    };
    solve_from(grid, prob, initial_slice(grid, f.as_ref()), sched, np)
}

/// Exact solution `u* = (1 + t)|z|² + 0.1·Re z₁` of the problem with forcing
/// `|z|² − n log(1 + t) + A u*` and boundary data `u*`.
pub fn manufactured_problem(n: usize, a: f64) -> Result<(FlowProblem, Arc<dyn SpaceTimeFn>)> {
    let exact: Arc<dyn SpaceTimeFn> = Arc::new(FnOf(|x: &[f64], t: f64| (1.0 + t) * abs2(x) + 0.1 * x[0]));
    let nf = n as f64;
    let ex = exact.clone();
    let forcing: Arc<dyn SpaceTimeFn> =
        Arc::new(FnOf(move |x: &[f64], t: f64| abs2(x) - nf * t.ln_1p() + a * ex.eval(x, t)));
    let ex0 = exact.clone();
    let prob = FlowProblem {
        domain: DomainSpec::unit(n)?,
        a,
        t_end: 0.5,
        forcing,
        boundary: exact.clone(),
        initial: InitialData::Smooth(Arc::new(FnOf(move |x: &[f64], _t: f64| ex0.eval(x, 0.0)))),
    };
    Ok((prob, exact))
}

/// Largest interior error of a flow state against an exact solution.
pub fn max_interior_error(grid: &Grid, fs: &FlowState, exact: &dyn SpaceTimeFn) -> f64 {
    let d = grid.dim();
    fs.fields
        .iter()
        .zip(&fs.times)
        .map(|(u, &t)| {
            grid.node_of
                .iter()
                .map(|&i| (u.values[i] - exact.eval(&grid.coords(i)[..d], t)).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Levels of the approximating sequence and the weak-solution estimate.
#[derive(Clone)]
pub struct ApproxSequence {
    pub levels: Vec<FlowState>,
    pub ramps: Vec<RampParams>,
    /// Pointwise minimum over the levels; the `t = 0` slice is `u₀` itself.
    pub weak: FlowState,
}

/// The smooth problem of level `k`.
pub fn level_problem(prob: &FlowProblem, pot: &SingularPotential, rp: &RampParams) -> Result<(FlowProblem, BoundaryRamp)> {
    let u0k = MollifiedPotential::with_delta(pot, &prob.domain, rp.k, rp.delta)?;
    let ramp = boundary_ramp(prob.boundary.clone(), prob.forcing.clone(), u0k.clone(), rp);
    let level = prob.with_data(Arc::new(ramp.clone()), InitialData::Smooth(Arc::new(u0k)));
    Ok((level, ramp))
}

pub fn smooth_approx_sequence(
    grid: &Grid,
    prob: &FlowProblem,
    k_max: u32,
    sched: &TimeSchedule,
    np: &NewtonParams,
) -> Result<ApproxSequence> {
    let InitialData::Singular(pot) = &prob.initial else {
        return Err(Error::WrongRegime("the approximating sequence needs a singular potential".into()));
    };
    if k_max < 2 {
        return Err(Error::InvalidArgument("k_max must be at least 2".into()));
    }
    pot.validate(grid)?;
    check_schedule(prob, sched)?;
    let ramps = ramp_schedule(pot, prob.forcing.as_ref(), grid, k_max)?;
    let mut levels = Vec::with_capacity(ramps.len());
    for rp in &ramps {
        let (level, _) = level_problem(prob, pot, rp)?;
        levels.push(solve_flow(grid, &level, sched, np)?);
    }
    let weak = pointwise_min(&levels, pot.sample(grid));
    Ok(ApproxSequence { levels, ramps, weak })
}

/// Pointwise minimum over levels at each snapshot, with `initial` replacing
/// the `t = 0` slice.
pub fn pointwise_min(levels: &[FlowState], initial: ScalarField) -> FlowState {
    let first = &levels[0];
    let m_cap = initial.m_cap;
    let mut fields = vec![initial];
    for (s, _) in first.times.iter().enumerate().skip(1) {
        let mut f = first.fields[s].clone();
        for l in &levels[1..] {
            for (v, w) in f.values.iter_mut().zip(&l.fields[s].values) {
                *v = v.min(*w);
            }
            if let (Some(tr), Some(tw)) = (f.trace.as_mut(), l.fields[s].trace.as_ref()) {
                for (v, w) in tr.iter_mut().zip(tw) {
                    *v = v.min(*w);
                }
            }
        }
        f.clip(m_cap);
        fields.push(f);
    }
    FlowState {
        times: first.times.clone(),
        fields,
        diagnostics: Vec::new(),
    }
}

/// Grid of the problem domain at the given resolution.
pub fn grid_for(prob: &FlowProblem, resolution: usize) -> Result<Grid> {
    build_grid(&prob.domain, resolution)
}

/// The discrete operator `u − dt(log det H(u) − A u + f) − u_prev` at the
/// unknowns, exposed for tests.
pub fn step_residual(
    grid: &Grid,
    prob: &FlowProblem,
    u: &ScalarField,
    u_prev: &ScalarField,
    dt: f64,
    delta: f64,
) -> Vec<f64> {
    let d = grid.dim();
    let f: Vec<f64> = grid
        .node_of
        .iter()
        .map(|&i| prob.forcing.eval(&grid.coords(i)[..d], u.time))
        .collect();
    residual(grid, u, &u_prev.interior(grid), &f, prob.a, dt, delta).g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::Atom;
    use crate::Const;

    #[test]
    fn stationary_quadratic_with_forcing() {
        // log det I = 0, so f = A|z|² keeps |z|² fixed up to the boundary
        // extrapolation error.
        let a = 0.5;
        let abs2f: Arc<dyn SpaceTimeFn> = Arc::new(FnOf(|x: &[f64], _t: f64| abs2(x)));
        let prob = FlowProblem {
            domain: DomainSpec::disc(),
            a,
            t_end: 1.0,
            forcing: Arc::new(FnOf(move |x: &[f64], _t: f64| a * abs2(x))),
            boundary: abs2f.clone(),
            initial: InitialData::Smooth(abs2f.clone()),
        };
        let g = build_grid(&prob.domain, 65).unwrap();
        let u0 = initial_slice(&g, abs2f.as_ref());
        let (u, diag) = implicit_step(&g, &prob, &u0, 0.01, 0.01, &NewtonParams::default()).unwrap();
        assert!(diag.residual <= 1e-9);
        let worst = g
            .node_of
            .iter()
            .map(|&i| (u.values[i] - abs2(&g.coords(i)[..2])).abs())
            .fold(0.0, f64::max);
        assert!(worst < g.h * g.h, "{worst}");
    }

    #[test]
    fn one_manufactured_step() {
        let (prob, exact) = manufactured_problem(1, 0.0).unwrap();
        let g = build_grid(&prob.domain, 129).unwrap();
        let u0 = initial_slice(&g, exact.as_ref());
        let (u, _) = implicit_step(&g, &prob, &u0, 1e-3, 1e-3, &NewtonParams::default()).unwrap();
        let worst = g
            .node_of
            .iter()
            .map(|&i| (u.values[i] - exact.eval(&g.coords(i)[..2], 1e-3)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 5e-4, "{worst}");
    }

    #[test]
    fn radial_symmetry_is_preserved() {
        let pot = SingularPotential::new(vec![Atom::new(&[0.0, 0.0], 1.0)], Arc::new(Const(0.0)));
        let prob = FlowProblem {
            domain: DomainSpec::disc(),
            a: 0.0,
            t_end: 0.1,
            forcing: Arc::new(Const(0.0)),
            boundary: Arc::new(Const(0.0)),
            initial: InitialData::Singular(pot.clone()),
        };
        let g = build_grid(&prob.domain, 33).unwrap();
        let rp = ramp_schedule(&pot, &Const(0.0), &g, 2).unwrap()[1];
        let (level, _) = level_problem(&prob, &pot, &rp).unwrap();
        let sched = TimeSchedule { dt: 0.005, steps: 4, stride: 4 };
        let fs = solve_flow(&g, &level, &sched, &NewtonParams::default()).unwrap();
        let u = fs.last();
        let m = g.nodes_per_axis;
        let mut worst: f64 = 0.0;
        for &node in &g.node_of {
            let [i, j, ..] = g.multi_index(node);
            // 90° rotation and reflections of the square grid.
            for (a, b) in [(m - 1 - j, i), (j, i), (m - 1 - i, j), (i, m - 1 - j)] {
                let other = g.node_at(&[a, b]);
                worst = worst.max((u.values[node] - u.values[other]).abs());
            }
        }
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn zero_steps_keep_initial_slice() {
        let (prob, exact) = manufactured_problem(1, 0.0).unwrap();
        let g = build_grid(&prob.domain, 33).unwrap();
        let fs = solve_flow(&g, &prob, &TimeSchedule { dt: 0.01, steps: 0, stride: 1 }, &NewtonParams::default())
            .unwrap();
        assert_eq!(fs.times, vec![0.0]);
        assert_eq!(fs.fields[0], initial_slice(&g, exact.as_ref()));
    }

    #[test]
    fn step_too_large() {
        let (prob, exact) = manufactured_problem(1, 0.0).unwrap();
        let g = build_grid(&prob.domain, 33).unwrap();
        let u0 = initial_slice(&g, exact.as_ref());
        assert!(matches!(
            implicit_step(&g, &prob, &u0, 0.2, 0.2, &NewtonParams::default()),
            Err(Error::StepTooLarge(_))
        ));
    }

    #[test]
    fn n1_jacobian_is_symmetric() {
        let (prob, exact) = manufactured_problem(1, 1.0).unwrap();
        let g = build_grid(&prob.domain, 33).unwrap();
        let mut u = initial_slice(&g, exact.as_ref());
        u.trace = Some(g.sample_trace(exact.as_ref(), 0.0));
        let (j, _, sym, _) = jacobian(&g, &u, 1.0, 0.01, DEFAULT_DELTA, None);
        assert!(sym);
        assert!(j.asymmetry() < 1e-9 * j.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn manufactured_n2_single_step() {
        let (prob, exact) = manufactured_problem(2, 0.0).unwrap();
        let g = build_grid(&prob.domain, 17).unwrap();
        let u0 = initial_slice(&g, exact.as_ref());
        let (u, d) = implicit_step(&g, &prob, &u0, 0.01, 0.01, &NewtonParams::default()).unwrap();
        assert!(d.residual <= 1e-9);
        let worst = g
            .node_of
            .iter()
            .map(|&i| (u.values[i] - exact.eval(&g.coords(i)[..4], 0.01)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn smooth_sequence_levels_differ_by_lift() {
        let pot = SingularPotential::new(vec![], Arc::new(FnOf(|x: &[f64], _| abs2(x) - 1.0)));
        let prob = FlowProblem {
            domain: DomainSpec::disc(),
            a: 0.0,
            t_end: 0.7,
            forcing: Arc::new(Const(0.0)),
            boundary: Arc::new(Const(0.0)),
            initial: InitialData::Singular(pot),
        };
        let g = build_grid(&prob.domain, 33).unwrap();
        let sched = TimeSchedule { dt: 0.01, steps: 70, stride: 10 };
        let seq = smooth_approx_sequence(&g, &prob, 3, &sched, &NewtonParams::default()).unwrap();
        let mid = seq.levels[0].nearest(0.35);
        for a in &seq.levels {
            for b in &seq.levels {
                let gap = g
                    .node_of
                    .iter()
                    .map(|&i| (a.fields[mid].values[i] - b.fields[mid].values[i]).abs())
                    .fold(0.0, f64::max);
                assert!(gap <= 2.0, "{gap}");
            }
        }
        // Weak estimate carries exact boundary data once every ramp finished.
        let last = seq.weak.last();
        assert!(seq.ramps[0].eps * 2.0 <= 0.7);
        assert!(last.trace.as_ref().unwrap().iter().all(|v| v.abs() < 1e-12));
    }
}
