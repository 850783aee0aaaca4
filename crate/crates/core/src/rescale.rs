//! The time change `v(z, s) = (A s + 1) u(z, log(A s + 1)/A)`, which turns
//! a flow with decay `A > 0` into one without it:
//!
//! ```text
//! v̇ = A u + u̇ = log det H(u) + f = log det H(v) − n log(A s + 1) + f
//! ```
//!
//! since `H(v) = (A s + 1) H(u)` has `n` eigenvalues scaled by `A s + 1`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{solve_flow, FlowProblem, FlowState, NewtonParams, TimeSchedule};
use crate::grid::{Grid, ScalarField};
use crate::theory::{time_backward, time_forward};
use crate::{FnOf, SpaceTimeFn};

/// A problem with `A > 0` and its `A = 0` counterpart.
#[derive(Clone, Debug)]
pub struct RescaledProblem {
    pub base: FlowProblem,
    /// Transformed horizon `S = (e^{A T} − 1)/A`.
    pub horizon: f64,
    /// `A = 0`, forcing `−n log(A s + 1) + f(z, t(s))`, boundary
    /// `(A s + 1) φ(z, t(s))`, same initial data.
    pub problem: FlowProblem,
}

pub fn to_a0_problem(prob: &FlowProblem) -> Result<RescaledProblem> {
    let a = prob.a;
    if !(a > 0.0) {
        return Err(Error::AIsZero);
    }
    let n = prob.n() as f64;
    let f = prob.forcing.clone();
    let phi = prob.boundary.clone();
    let forcing: Arc<dyn SpaceTimeFn> = Arc::new(FnOf(move |x: &[f64], s: f64| {
        -n * (a * s).ln_1p() + f.eval(x, time_backward(a, s))
    }));
    let boundary: Arc<dyn SpaceTimeFn> =
        Arc::new(FnOf(move |x: &[f64], s: f64| (a * s + 1.0) * phi.eval(x, time_backward(a, s))));
    let horizon = time_forward(a, prob.t_end);
    let problem = FlowProblem {
        a: 0.0,
        t_end: horizon,
        forcing,
        boundary,
        ..prob.clone()
    };
    Ok(RescaledProblem {
        base: prob.clone(),
        horizon,
        problem,
    })
}

fn blend(a: &ScalarField, b: &ScalarField, w: f64, scale: f64, t: f64) -> ScalarField {
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| ((1.0 - w) * p + w * q) * scale).collect() };
    ScalarField {
        values: mix(&a.values, &b.values),
        floor: a.floor.iter().zip(&b.floor).map(|(p, q)| *p || *q).collect(),
        time: t,
        m_cap: a.m_cap,
        trace: match (&a.trace, &b.trace) {
            (Some(x), Some(y)) => Some(mix(x, y)),
            _ => None,
        },
    }
}

/// `u(·, t) = v(·, s(t)) / (A s(t) + 1)` at the requested times, with `v`
/// interpolated linearly in `s` between snapshots.
pub fn pull_back(vfs: &FlowState, a: f64, times: &[f64]) -> Result<FlowState> {
    if !(a >= 0.0) {
        return Err(Error::InvalidArgument(format!("A = {a} must be nonnegative")));
    }
    let (first, last) = (vfs.times[0], *vfs.times.last().expect("nonempty flow state"));
    let slack = 1e-12 * (1.0 + last.abs());
    let mut fields = Vec::with_capacity(times.len());
    for &t in times {
        let s = time_forward(a, t);
        if !(s >= first - slack && s <= last + slack) {
            return Err(Error::TimeOutOfRange(t));
        }
        let j = vfs.times.partition_point(|&x| x < s).clamp(1, vfs.times.len().max(2) - 1);
        let scale = 1.0 / (a * s + 1.0);
        let field = if vfs.times.len() == 1 {
            blend(&vfs.fields[0], &vfs.fields[0], 0.0, scale, t)
        } else {
            let (s0, s1) = (vfs.times[j - 1], vfs.times[j]);
            let w = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
            blend(&vfs.fields[j - 1], &vfs.fields[j], w, scale, t)
        };
        fields.push(field);
    }
    Ok(FlowState {
        times: times.to_vec(),
        fields,
        diagnostics: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// Sup over interior nodes and snapshots of `|u_direct − u_pulled|`.
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub direct: FlowState,
    pub rescaled: FlowState,
    pub pulled: FlowState,
}

/// Solve `prob` directly on `sched` and through [`to_a0_problem`] with the
/// same number of uniform steps over `[0, S]`, then compare on the direct
/// snapshot times.
pub fn equivalence_check(
    g: &Grid,
    prob: &FlowProblem,
    sched: &TimeSchedule,
    np: &NewtonParams,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let rp = to_a0_problem(prob)?;
    let s_end = time_forward(prob.a, sched.horizon());
    let rsched = if sched.steps == 0 {
        *sched
    } else {
        TimeSchedule {
            dt: s_end / sched.steps as f64,
            steps: sched.steps,
            stride: 1,
        }
    };
    let (direct, rescaled) = rayon::join(|| solve_flow(g, prob, sched, np), || solve_flow(g, &rp.problem, &rsched, np));
    let (direct, rescaled) = (direct?, rescaled?);
    let pulled = pull_back(&rescaled, prob.a, &direct.times)?;
    let discrepancy = direct
        .fields
        .iter()
        .zip(&pulled.fields)
        .map(|(a, b)| {
            g.node_of
                .iter()
                .map(|&i| (a.values[i] - b.values[i]).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        discrepancy,
        tolerance,
        pass: discrepancy <= tolerance,
        direct,
        rescaled,
        pulled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::manufactured_problem;
    use crate::grid::build_grid;
    use crate::{abs2, Const};
    use approx::assert_abs_diff_eq;

    #[test]
    fn transformed_data() {
        let (mut prob, _) = manufactured_problem(1, 1.0).unwrap();
        prob.t_end = 2f64.ln();
        let rp = to_a0_problem(&prob).unwrap();
        assert_abs_diff_eq!(rp.horizon, 1.0, epsilon = 1e-15);
        assert!(rp.horizon > prob.t_end);
        let x = [0.3, -0.2];
        assert_eq!(rp.problem.forcing.eval(&x, 0.0), prob.forcing.eval(&x, 0.0));
        assert_eq!(rp.problem.boundary.eval(&x, 0.0), prob.boundary.eval(&x, 0.0));
        assert_eq!(rp.problem.u0(&x), prob.u0(&x));

        let mut flat = prob.clone();
        flat.forcing = Arc::new(Const(0.0));
        let rp = to_a0_problem(&flat).unwrap();
        assert_abs_diff_eq!(rp.problem.forcing.eval(&x, std::f64::consts::E - 1.0), -1.0, epsilon = 1e-15);

        flat.a = 0.0;
        assert!(matches!(to_a0_problem(&flat), Err(Error::AIsZero)));
    }

    /// The image of the exact solution `u* = (1 + t)|z|² + 0.1 Re z₁` solves
    /// the transformed equation, with `v̇ = A u* + u̇*` and
    /// `H(v) = (A s + 1)(1 + t)` computed by hand.
    #[test]
    fn exact_solution_maps_to_transformed_equation() {
        let a = 1.0;
        let (prob, exact) = manufactured_problem(1, a).unwrap();
        let rp = to_a0_problem(&prob).unwrap();
        for i in 0..=20 {
            let s = 0.05 * i as f64;
            let x = [0.36 * (i as f64).cos(), 0.3 * (i as f64).sin()];
            let t = time_backward(a, s);
            let vdot = a * exact.eval(&x, t) + abs2(&x);
            let logdet = ((a * s + 1.0) * (1.0 + t)).ln();
            let resid = vdot - (logdet + rp.problem.forcing.eval(&x, s));
            assert!(resid.abs() <= 1e-10, "{s} {resid}");
        }
    }

    #[test]
    fn pull_back_cases() {
        let g = build_grid(&crate::grid::DomainSpec::disc(), 17).unwrap();
        let mut f = ScalarField::zeros(&g);
        f.values.iter_mut().for_each(|v| *v = 2.0);
        let v = FlowState {
            times: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            fields: vec![f.clone(); 5],
            diagnostics: Vec::new(),
        };
        let a = 0.7;
        let times = [0.0, 0.3, 0.6, time_backward(a, 2.0)];
        let u = pull_back(&v, a, &times).unwrap();
        assert_eq!(u.fields[0].values, f.values);
        for (field, &t) in u.fields.iter().zip(&times) {
            assert_abs_diff_eq!(field.values[0], 2.0 * (-a * t).exp(), epsilon = 1e-12);
        }
        assert!(matches!(pull_back(&v, a, &[2.0]), Err(Error::TimeOutOfRange(_))));
    }

    #[test]
    fn zero_step_schedule() {
        let g = build_grid(&crate::grid::DomainSpec::disc(), 17).unwrap();
        let (prob, _) = manufactured_problem(1, 1.0).unwrap();
        let sched = TimeSchedule { dt: 0.01, steps: 0, stride: 1 };
        let r = equivalence_check(&g, &prob, &sched, &NewtonParams::default(), 5e-2).unwrap();
        assert_eq!(r.discrepancy, 0.0);
        assert_eq!(r.direct.fields[0].values, r.pulled.fields[0].values);
    }

    #[test]
    fn manufactured_equivalence_coarse() {
        let g = build_grid(&crate::grid::DomainSpec::disc(), 33).unwrap();
        let (prob, _) = manufactured_problem(1, 1.0).unwrap();
        let sched = TimeSchedule::covering(0.01, 0.5, 5);
        let r = equivalence_check(&g, &prob, &sched, &NewtonParams::default(), 5e-2).unwrap();
        assert!(r.pass, "{}", r.discrepancy);
    }

    #[test]
    fn small_a_is_nearly_identity() {
        let g = build_grid(&crate::grid::DomainSpec::disc(), 17).unwrap();
        let (prob, _) = manufactured_problem(1, 1e-8).unwrap();
        let sched = TimeSchedule::covering(0.01, 0.2, 5);
        let np = NewtonParams::default();
        let r = equivalence_check(&g, &prob, &sched, &np, 10.0 * np.tol).unwrap();
        assert!(r.pass, "{}", r.discrepancy);
    }
}
