//! Grid convergence of the backward-Euler solver against the exact solution
//! `u* = (1 + t)|z|² + 0.1 Re z₁` on the unit disc, with `dt ∝ h²`.
//!
//! ```text
//! cargo run --release --example manufactured_convergence
//! ```

use pcma::config::{RunConfig, Task};
use pcma::tasks::convergence_study;

fn main() -> pcma::Result<()> {
    let mut cfg = RunConfig::new(Task::ManufacturedConvergence);
    cfg.problem.t_end = 0.5;
    let rows = convergence_study(&cfg, &[33, 65, 129], 16.0)?;
    println!("{:>5} {:>9} {:>10} {:>11} {:>6}", "N", "h", "dt", "max error", "ratio");
    for (i, r) in rows.iter().enumerate() {
        let ratio = if i > 0 { rows[i - 1].error / r.error } else { f64::NAN };
        println!("{:>5} {:>9.5} {:>10.3e} {:>11.3e} {:>6.2}", r.resolution, r.h, r.dt, r.error, ratio);
    }
    Ok(())
}
