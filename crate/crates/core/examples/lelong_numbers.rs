//! Lelong numbers of fixed grid fields from the slope of sphere maxima
//! against `log r`.
//!
//! ```text
//! cargo run --release --example lelong_numbers
//! ```

use std::sync::Arc;

use pcma::grid::{build_grid, DomainSpec};
use pcma::initial::{Atom, SingularPotential};
use pcma::lelong::{lelong_estimate, RadiusSpec};
use pcma::{abs2, FnOf};

fn main() -> pcma::Result<()> {
    let g = build_grid(&DomainSpec::disc(), 257)?;
    let origin = [0.0, 0.0];
    let rs = RadiusSpec::default_for(&g, &origin);
    println!("radii {:.4} .. {:.4} ({} samples)", rs.r_min, rs.r_max, rs.n_radii);
    for nu in [0.5, 1.0, 2.5] {
        let pot = SingularPotential::new(vec![Atom::new(&origin, nu)], Arc::new(FnOf(|x: &[f64], _| abs2(x))));
        let est = lelong_estimate(&pot.sample(&g), &g, &origin, &rs)?;
        println!("{nu} log|z| + |z|²: estimate {:.5}", est.nu);
    }
    let smooth = g.sample(&FnOf(|x: &[f64], _| abs2(x) + 0.3 * x[0]), 0.0, false);
    println!("|z|² + 0.3 x: estimate {:.5}", lelong_estimate(&smooth, &g, &origin, &rs)?.nu);
    Ok(())
}
