//! The time change `v(z, s) = (As + 1) u(z, log(As + 1)/A)` removes the
//! decay term. Solving the `A = 1` problem directly and through the
//! transformed problem gives the same flow up to discretization error.
//!
//! ```text
//! cargo run --release --example rescale_equivalence
//! ```

use pcma::flow::{manufactured_problem, NewtonParams, TimeSchedule};
use pcma::grid::build_grid;
use pcma::rescale::{equivalence_check, to_a0_problem};

fn main() -> pcma::Result<()> {
    let (prob, _) = manufactured_problem(1, 1.0)?;
    let rp = to_a0_problem(&prob)?;
    println!("T = {} maps to S = {:.6}", prob.t_end, rp.horizon);
    let g = build_grid(&prob.domain, 129)?;
    let r = equivalence_check(&g, &prob, &TimeSchedule::covering(1e-3, 0.5, 50), &NewtonParams::default(), 5e-2)?;
    println!("sup discrepancy {:.3e} (tolerance {:.0e})", r.discrepancy, r.tolerance);
    Ok(())
}
