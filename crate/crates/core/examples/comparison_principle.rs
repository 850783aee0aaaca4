//! Comparison principle on computed flows: raising the forcing never lowers
//! the solution, and `u̲ = Mρ + φ` is a subsolution once `M` is large enough.
//!
//! ```text
//! cargo run --release --example comparison_principle
//! ```

use std::sync::Arc;

use pcma::flow::{solve_flow, FlowProblem, InitialData, NewtonParams, TimeSchedule};
use pcma::grid::{build_grid, DomainSpec, DEFAULT_DELTA};
use pcma::verify::{comparison_check, subsolution_check};
use pcma::{abs2, Const, FnOf};

fn main() -> pcma::Result<()> {
    let g = build_grid(&DomainSpec::disc(), 65)?;
    let base = FlowProblem {
        domain: DomainSpec::disc(),
        a: 0.0,
        t_end: 0.2,
        forcing: Arc::new(FnOf(|x: &[f64], t: f64| 0.3 * x[0] - t)),
        boundary: Arc::new(FnOf(|x: &[f64], t: f64| 0.2 * t * x[1])),
        initial: InitialData::Smooth(Arc::new(FnOf(|x: &[f64], _| abs2(x) - 1.0))),
    };
    let f = base.forcing.clone();
    let raised = FlowProblem {
        forcing: Arc::new(FnOf(move |x: &[f64], t: f64| f.eval(x, t) + 0.5)),
        ..base.clone()
    };
    let sched = TimeSchedule::covering(0.01, 0.2, 5);
    let np = NewtonParams::default();
    let u = solve_flow(&g, &base, &sched, &np)?;
    let v = solve_flow(&g, &raised, &sched, &np)?;
    println!("{}", comparison_check(&g, &u, &v, np.tol + 1e-6)?.summary());
    println!("{}", comparison_check(&g, &u, &u, 0.0)?.summary());

    let (m, tried) = subsolution_check(&g, &base, &u.times, DEFAULT_DELTA, 1e-8)?;
    println!("smallest multiplier {m:?} after {} tries", tried.len());
    let hopeless = FlowProblem {
        forcing: Arc::new(Const(-1e6)),
        ..base
    };
    let (m, _) = subsolution_check(&g, &hopeless, &u.times, DEFAULT_DELTA, 1e-8)?;
    println!("with f = -1e6: {m:?}");
    Ok(())
}
