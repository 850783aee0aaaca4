//! A-priori bounds on a computed flow: the time-derivative band and the
//! lower Lipschitz bound `u(·, t) − u(·, 0) ≥ −C(t)`, with constants measured
//! from the data.
//!
//! ```text
//! cargo run --release --example a_priori_bounds
//! ```

use pcma::flow::{manufactured_problem, solve_flow, NewtonParams, TimeSchedule};
use pcma::grid::build_grid;
use pcma::theory::{dotu_bound_b, lower_lipschitz_c};
use pcma::verify::{dotu_bounds_check, lower_lipschitz_check, measured_constants};

fn main() -> pcma::Result<()> {
    let (prob, _) = manufactured_problem(1, 0.0)?;
    let g = build_grid(&prob.domain, 65)?;
    let np = NewtonParams::default();
    let fs = solve_flow(&g, &prob, &TimeSchedule::covering(0.005, 0.5, 10), &np)?;
    let consts = measured_constants(&g, &prob, &fs.times);
    println!("B = {:.4}, C(0.25) = {:.4}", dotu_bound_b(&consts), lower_lipschitz_c(&consts, 0.25));
    let dot = dotu_bounds_check(&g, &fs, &consts, np.tol)?;
    let low = lower_lipschitz_check(&g, &fs, &consts, np.tol)?;
    println!("{}\n{}", dot.summary(), low.summary());
    for (t, margin) in low.series.iter().step_by(2) {
        println!("  t = {t:.3}: min(u − u₀) + C(t) = {margin:.4}");
    }
    Ok(())
}
