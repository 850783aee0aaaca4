//! Resolution time of the pole of `u₀ = log|z|` on the unit disc.
//!
//! The singular data is replaced by four mollified levels; their pointwise
//! minimum estimates the weak solution, whose Lelong number at the origin is
//! tracked until it vanishes. Theory puts the resolution time at
//! `log(1 + A/2)/A` (`1/2` for `A = 0`).
//!
//! ```text
//! cargo run --release --example resolution_time -- [A] [N] [dt]
//! ```

use std::sync::Arc;

use pcma::flow::{smooth_approx_sequence, FlowProblem, InitialData, NewtonParams, TimeSchedule};
use pcma::grid::{build_grid, DomainSpec};
use pcma::initial::{Atom, SingularPotential};
use pcma::lelong::{check_bounds, track, RadiusSpec, ResolutionCriteria};
use pcma::Const;

fn main() -> pcma::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let a = args.first().copied().unwrap_or(0.0);
    let resolution = args.get(1).map_or(129, |&v| v as usize);
    let dt = args.get(2).copied().unwrap_or(1e-3);
    let t_end = 0.65;

    let pot = SingularPotential::new(vec![Atom::new(&[0.0, 0.0], 1.0)], Arc::new(Const(0.0)));
    let prob = FlowProblem {
        domain: DomainSpec::disc(),
        a,
        t_end,
        forcing: Arc::new(Const(0.0)),
        boundary: Arc::new(Const(0.0)),
        initial: InitialData::Singular(pot.clone()),
    };
    let g = build_grid(&prob.domain, resolution)?;
    let sched = TimeSchedule::covering(dt, t_end, (0.025 / dt).round().max(1.0) as usize);
    let seq = smooth_approx_sequence(&g, &prob, 4, &sched, &NewtonParams::default())?;
    for (rp, l) in seq.ramps.iter().zip(&seq.levels) {
        let newton: usize = l.diagnostics.iter().map(|d| d.newton_iterations).sum();
        println!("level {}: δ = {:.4}, ε = {:.4}, {newton} Newton iterations", rp.k, rp.delta, rp.eps);
    }

    let origin = [0.0, 0.0];
    let criteria = ResolutionCriteria {
        m_cap: pot.m_cap,
        ..ResolutionCriteria::default()
    };
    let rec = track(&seq.weak, &g, &origin, 1.0, a, &sched, &RadiusSpec::default_for(&g, &origin), &criteria)?;
    println!("{:>7} {:>10} {:>8}", "t", "u(0,t)", "nu_hat");
    for s in &rec.series {
        println!("{:>7.3} {:>10.4} {:>8.4}", s.t, s.u_at_atom, s.nu_hat);
    }
    let b = check_bounds(&rec, None);
    match b.measured {
        Some(e) => println!("resolved at {e:.4}; predicted [{:.4}, {:.4}] ± {:.4}", b.lo, b.hi, b.slack),
        None => println!("not resolved by t = {t_end}; predicted {:.4}", b.lo),
    }
    Ok(())
}
