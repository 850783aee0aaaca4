//! A-posteriori checks of comparison, a-priori bounds and monotonicity on
//! computed flows. Every check is a pure function of its inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, FlowState};
use crate::grid::{complex_hessian, defining_function, Grid, ScalarField};
use crate::theory::{dotu_bound_b, lower_lipschitz_c, TheoryConstants};

/// Outcome of one principle check.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipleReport {
    pub name: String,
    /// Largest signed amount by which the checked inequality fails; negative
    /// values are margins.
    pub worst_violation: f64,
    /// Node and time of the worst violation.
    pub location: Option<(usize, f64)>,
    pub tolerance: f64,
    pub pass: bool,
    /// Per-time quantities behind the verdict (gap, margin, ...).
    pub series: Vec<(f64, f64)>,
}

impl PrincipleReport {
    fn new(name: &str, worst: Worst, tolerance: f64, series: Vec<(f64, f64)>) -> Self {
        PrincipleReport {
            name: name.to_string(),
            worst_violation: worst.value,
            location: worst.location,
            tolerance,
            pass: worst.value <= tolerance,
            series,
        }
    }

    /// One-line human-readable summary.
    pub fn summary(&self) -> String {
        let loc = match self.location {
            Some((node, t)) => format!(" at node {node}, t = {t:.4}"),
            None => String::new(),
        };
        format!(
            "{:<24} {} worst {:+.3e} (tol {:.1e}){loc}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst_violation,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    location: Option<(usize, f64)>,
}

impl Worst {
    fn none() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            location: None,
        }
    }

    fn at(value: f64, node: usize, t: f64) -> Self {
        Worst {
            value,
            location: Some((node, t)),
        }
    }

    fn max(self, other: Worst) -> Worst {
        if other.value > self.value {
            other
        } else {
            self
        }
    }
}

/// Largest `f(node)` over the unknowns, with its node.
fn interior_max(g: &Grid, t: f64, f: impl Fn(usize) -> f64 + Sync) -> Worst {
    g.node_of
        .par_iter()
        .map(|&i| Worst::at(f(i), i, t))
        .reduce(Worst::none, Worst::max)
}

fn check_same_shape(u: &FlowState, v: &FlowState) -> Result<()> {
    if u.times.len() != v.times.len() {
        return Err(Error::GridMismatch(format!(
            "{} snapshots against {}",
            u.times.len(),
            v.times.len()
        )));
    }
    for (a, b) in u.times.iter().zip(&v.times) {
        if (a - b).abs() > 1e-12 {
            return Err(Error::GridMismatch(format!("snapshot times {a} and {b} differ")));
        }
    }
    for (a, b) in u.fields.iter().zip(&v.fields) {
        if a.values.len() != b.values.len() {
            return Err(Error::GridMismatch(format!(
                "{} nodes against {}",
                a.values.len(),
                b.values.len()
            )));
        }
    }
    Ok(())
}

/// `sup(u − v)` over interior space-time against `max(0, sup over the
/// parabolic boundary)`. The boundary is the t = 0 slice together with the
/// boundary traces (or, without traces, the exterior nodes) at every time.
pub fn comparison_check(g: &Grid, u: &FlowState, v: &FlowState, tol: f64) -> Result<PrincipleReport> {
    check_same_shape(u, v)?;
    let initial = &u.fields[0];
    if initial.values.len() != g.node_count() {
        return Err(Error::GridMismatch("flow states do not live on this grid".into()));
    }
    let mut boundary = interior_max(g, 0.0, |i| u.fields[0].values[i] - v.fields[0].values[i]).value;
    let mut inner = Worst::none();
    let mut series = Vec::with_capacity(u.times.len());
    for (s, &t) in u.times.iter().enumerate() {
        let (fu, fv) = (&u.fields[s], &v.fields[s]);
        let edge = match (&fu.trace, &fv.trace) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max),
            _ => (0..g.node_count())
                .filter(|&i| !g.is_interior(i))
                .map(|i| fu.values[i] - fv.values[i])
                .fold(f64::NEG_INFINITY, f64::max),
        };
        boundary = boundary.max(edge);
        if s > 0 {
            let w = interior_max(g, t, |i| fu.values[i] - fv.values[i]);
            series.push((t, w.value));
            inner = inner.max(w);
        }
    }
    let bound = boundary.max(0.0);
    let worst = Worst {
        value: inner.value - bound,
        location: inner.location,
    };
    let worst = if worst.value.is_finite() {
        worst
    } else {
        Worst {
            value: 0.0,
            location: None,
        }
    };
    Ok(PrincipleReport::new("comparison", worst, tol, series))
}

/// Two-sided bound on the time derivative of an `A = 0` flow,
/// `(u − sup u₀)/t − B ≤ u̇ ≤ (u − u₀)/t + B`, with `u̇` from centered
/// differences at interior snapshots. The slack is
/// `2·Δt·max|ü| + solver_tol`, where `Δt` is the snapshot spacing and `ü`
/// is estimated by second differences.
pub fn dotu_bounds_check(
    g: &Grid,
    fs: &FlowState,
    consts: &TheoryConstants,
    solver_tol: f64,
) -> Result<PrincipleReport> {
    if consts.a != 0.0 {
        return Err(Error::WrongRegime(format!(
            "the time-derivative bound is stated for A = 0, got A = {}",
            consts.a
        )));
    }
    let b = dotu_bound_b(consts);
    let u0 = &fs.fields[0];
    let sup_u0 = g
        .node_of
        .iter()
        .filter(|&&i| !u0.floor[i])
        .map(|&i| u0.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut worst = Worst::none();
    let mut max_udd: f64 = 0.0;
    let mut max_span: f64 = 0.0;
    let mut series = Vec::new();
    for s in 1..fs.times.len().saturating_sub(1) {
        let (tm, t, tp) = (fs.times[s - 1], fs.times[s], fs.times[s + 1]);
        let (um, uc, up) = (&fs.fields[s - 1], &fs.fields[s], &fs.fields[s + 1]);
        max_span = max_span.max((tp - tm) / 2.0);
        let w = g
            .node_of
            .par_iter()
            .filter(|&&i| !(uc.floor[i] || um.floor[i] || up.floor[i]))
            .map(|&i| {
                let udot = (up.values[i] - um.values[i]) / (tp - tm);
                let udd = 2.0
                    * ((up.values[i] - uc.values[i]) / (tp - t) - (uc.values[i] - um.values[i]) / (t - tm))
                    / (tp - tm);
                let upper = if u0.floor[i] {
                    f64::INFINITY
                } else {
                    (uc.values[i] - u0.values[i]) / t + b
                };
                let lower = (uc.values[i] - sup_u0) / t - b;
                (Worst::at((udot - upper).max(lower - udot), i, t), udd.abs())
            })
            .reduce(|| (Worst::none(), 0.0), |a, c| (a.0.max(c.0), a.1.max(c.1)));
        series.push((t, w.0.value));
        worst = worst.max(w.0);
        max_udd = max_udd.max(w.1);
    }
    if worst.location.is_none() {
        worst.value = 0.0;
    }
    let slack = 2.0 * max_span * max_udd + solver_tol;
    Ok(PrincipleReport::new("dotu-bounds", worst, slack, series))
}

/// `min (u(·, t) − u(·, 0)) ≥ −C(t)` at every snapshot.
pub fn lower_lipschitz_check(
    g: &Grid,
    fs: &FlowState,
    consts: &TheoryConstants,
    tol: f64,
) -> Result<PrincipleReport> {
    let u0 = &fs.fields[0];
    let mut worst = Worst::none();
    let mut series = Vec::with_capacity(fs.times.len());
    for (s, &t) in fs.times.iter().enumerate() {
        let c = lower_lipschitz_c(consts, t);
        let f = &fs.fields[s];
        let w = g
            .node_of
            .par_iter()
            .filter(|&&i| !u0.floor[i])
            .map(|&i| Worst::at(u0.values[i] - f.values[i] - c, i, t))
            .reduce(Worst::none, Worst::max);
        series.push((t, -w.value));
        worst = worst.max(w);
    }
    if worst.location.is_none() {
        worst.value = 0.0;
    }
    Ok(PrincipleReport::new("lower-lipschitz", worst, tol, series))
}

/// Candidate multipliers tried by [`subsolution_check`].
pub fn subsolution_multipliers() -> impl Iterator<Item = f64> {
    (0..=10).map(|e| f64::from(1u32 << e))
}

/// Check that `u̲ = M ρ + φ(·, t)` is a discrete subsolution at the given
/// times: eigenvalues at least `delta`, `u̲̇ ≤ log det H(u̲) − A u̲ + f`,
/// `u̲ = φ` on the boundary and `u̲(·, 0) ≤ u₀`. The Hessian is taken in
/// nodal mode, since `u̲` is an explicit smooth function defined past the
/// boundary.
pub fn subsolution_at(
    g: &Grid,
    prob: &FlowProblem,
    m: f64,
    times: &[f64],
    delta: f64,
    tol: f64,
) -> Result<PrincipleReport> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("multiplier M = {m} must be positive")));
    }
    let d = g.dim();
    let rho = defining_function(&g.spec, g);
    let build = |t: f64| {
        let phi = g.sample(prob.boundary.as_ref(), t, false);
        let mut u = ScalarField::zeros(g);
        for ((v, r), p) in u.values.iter_mut().zip(&rho.values).zip(&phi.values) {
            *v = m * r + p;
        }
        u.time = t;
        u
    };
    let mut worst = Worst::none();
    let mut series = Vec::with_capacity(times.len());
    for &t in times {
        let u = build(t);
        let h = complex_hessian(&u, g);
        // ρ does not depend on t, so u̲̇ = φ̇.
        let tau = 1e-6;
        let (ta, tb) = if t >= tau { (t - tau, t + tau) } else { (t, t + tau) };
        let w = (0..g.unknowns())
            .into_par_iter()
            .map(|p| {
                let node = g.node_of[p];
                let x = &g.coords(node)[..d];
                let c = h.entries[p].clamped(g.n(), delta);
                let phidot = (prob.boundary.eval(x, tb) - prob.boundary.eval(x, ta)) / (tb - ta);
                let rhs = c.logdet - prob.a * u.values[node] + prob.forcing.eval(x, t);
                Worst::at((delta - c.min_eig).max(phidot - rhs), node, t)
            })
            .reduce(Worst::none, Worst::max);
        series.push((t, w.value));
        worst = worst.max(w);
        let edge = g
            .crossings
            .iter()
            .map(|c| Worst::at((m * g.spec.rho(&c.point[..d])).abs(), c.node, t))
            .fold(Worst::none(), Worst::max);
        worst = worst.max(edge);
    }
    let u = build(0.0);
    let init = interior_max(g, 0.0, |i| u.values[i] - prob.u0(&g.coords(i)[..d]));
    worst = worst.max(init);
    Ok(PrincipleReport::new(&format!("subsolution M={m}"), worst, tol, series))
}

/// Smallest `M ∈ {1, 2, 4, …, 2¹⁰}` for which [`subsolution_at`] passes,
/// with the report of every multiplier tried.
pub fn subsolution_check(
    g: &Grid,
    prob: &FlowProblem,
    times: &[f64],
    delta: f64,
    tol: f64,
) -> Result<(Option<f64>, Vec<PrincipleReport>)> {
    let mut reports = Vec::new();
    for m in subsolution_multipliers() {
        let r = subsolution_at(g, prob, m, times, delta, tol)?;
        let pass = r.pass;
        reports.push(r);
        if pass {
            return Ok((Some(m), reports));
        }
    }
    Ok((None, reports))
}

/// `u_k + 2^{−k} ≥ u_{k+1}` for each adjacent pair of levels, where `ks[i]`
/// is the level index of `levels[i]`.
pub fn monotone_sequence_check(
    g: &Grid,
    levels: &[FlowState],
    ks: &[u32],
    tol: f64,
) -> Result<PrincipleReport> {
    if levels.len() < 2 || ks.len() != levels.len() {
        return Err(Error::InvalidArgument(
            "need at least two levels, each with its index".into(),
        ));
    }
    let mut worst = Worst::none();
    let mut series = Vec::new();
    for (pair, k) in levels.windows(2).zip(ks) {
        check_same_shape(&pair[0], &pair[1])?;
        let slack = 0.5f64.powi(*k as i32);
        let mut pair_worst = Worst::none();
        for (s, &t) in pair[0].times.iter().enumerate() {
            let (a, b) = (&pair[0].fields[s], &pair[1].fields[s]);
            pair_worst = pair_worst.max(interior_max(g, t, |i| b.values[i] - a.values[i] - slack));
        }
        series.push((f64::from(*k), pair_worst.value));
        worst = worst.max(pair_worst);
    }
    Ok(PrincipleReport::new("monotone-sequence", worst, tol, series))
}

/// Grid L¹ norm of `û(·, t) − u₀` over nodes where neither is at the floor.
pub fn l1_gap(g: &Grid, u: &ScalarField, u0: &ScalarField) -> f64 {
    let cell = g.h.powi(g.dim() as i32);
    g.node_of
        .iter()
        .filter(|&&i| !(u.floor[i] || u0.floor[i]))
        .map(|&i| (u.values[i] - u0.values[i]).abs())
        .sum::<f64>()
        * cell
}

/// The L¹ gap to `u₀` over the first five positive-time snapshots must
/// shrink as `t → 0`: each gap is at most the next one plus `tol`.
pub fn continuity_at_zero_check(
    g: &Grid,
    weak: &FlowState,
    u0: &ScalarField,
    tol: f64,
) -> Result<PrincipleReport> {
    let take = weak.times.len().saturating_sub(1).min(5);
    if take < 2 {
        return Err(Error::InvalidArgument("need at least two positive-time snapshots".into()));
    }
    let series: Vec<(f64, f64)> = (1..=take)
        .map(|s| (weak.times[s], l1_gap(g, &weak.fields[s], u0)))
        .collect();
    let mut worst = Worst::none();
    for w in series.windows(2) {
        worst = worst.max(Worst {
            value: w[0].1 - w[1].1,
            location: Some((0, w[0].0)),
        });
    }
    Ok(PrincipleReport::new("continuity-at-zero", worst, tol, series))
}

/// Data constants of a smooth problem measured on the grid: sup norms of the
/// boundary data over the crossings, of the forcing over the unknowns, and of
/// their time derivatives, all over the given times.
pub fn measured_constants(g: &Grid, prob: &FlowProblem, times: &[f64]) -> TheoryConstants {
    let d = g.dim();
    let tau = 1e-6;
    let deriv = |f: &dyn crate::SpaceTimeFn, x: &[f64], t: f64| {
        let (ta, tb) = if t >= tau { (t - tau, t + tau) } else { (t, t + tau) };
        (f.eval(x, tb) - f.eval(x, ta)) / (tb - ta)
    };
    let mut c = TheoryConstants::unit(g.n(), prob.a, prob.t_end);
    c.inf_rho = g
        .node_of
        .iter()
        .map(|&i| g.spec.rho(&g.coords(i)[..d]))
        .fold(0.0, f64::min)
        .min(-g.spec.radius * g.spec.radius);
    let mut modulus = Vec::with_capacity(times.len());
    let mut running: f64 = 0.0;
    for &t in times {
        for cr in &g.crossings {
            let x = &cr.point[..d];
            let v = prob.boundary.eval(x, t);
            c.sup_psi = c.sup_psi.max(v.abs());
            c.sup_phidot = c.sup_phidot.max(deriv(prob.boundary.as_ref(), x, t).abs());
            running = running.max((v - prob.boundary.eval(x, 0.0)).abs());
        }
        modulus.push((t, running));
        let (sg, sf) = g
            .node_of
            .par_iter()
            .map(|&i| {
                let x = &g.coords(i)[..d];
                (prob.forcing.eval(x, t).abs(), deriv(prob.forcing.as_ref(), x, t).abs())
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        c.sup_g = c.sup_g.max(sg);
        c.sup_fdot = c.sup_fdot.max(sf);
    }
    // Step function over the sampled times, taking the value at the first
    // sampled time not before t.
    c.boundary_modulus = std::sync::Arc::new(move |t: f64| {
        modulus
            .iter()
            .find(|(s, _)| *s >= t - 1e-12)
            .or(modulus.last())
            .map_or(0.0, |m| m.1)
    });
    c
}
