//! Weighted Bergman bases of `e^{−2mφ}` on the disc and the Lelong-number
//! sandwich `ν(φ) − 1/m ≤ ν(φ_m) ≤ ν(φ)`.
//!
//! ```text
//! cargo run --release --example demailly_radial
//! ```

use std::sync::Arc;

use pcma::demailly::{gram_matrix, orthonormal_basis, phi_m, radial_oracle_error, verify_dem_bounds, QuadSpec, Weight};
use pcma::Const;

fn main() -> pcma::Result<()> {
    let degree = 16;
    for m_nu in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let (worst, basis) = radial_oracle_error(m_nu, degree, &QuadSpec::default())?;
        println!("mν = {m_nu}: k_min {:?}, worst relative error {worst:.2e}", basis.k_min());
    }

    let w = Weight::new(vec![([0.0, 0.0], 1.0), ([0.4, 0.1], 0.5)], Arc::new(Const(0.0)), 4.0)?;
    let basis = orthonormal_basis(&gram_matrix(&w, degree, &QuadSpec::default())?)?;
    let report = verify_dem_bounds(&w, &basis, &[[-0.3, 0.2]], &[0.02, 0.04, 0.08]);
    for r in &report.rows {
        println!(
            "z = {:?}: ν(φ) = {:.3}, ν(φ_m) = {:.3}, lower {:.3} -> {}",
            r.z,
            r.nu_phi,
            r.nu_phi_m,
            r.lower,
            if r.pass { "ok" } else { "violated" }
        );
    }
    println!("φ_m(0.7) = {:.5}", phi_m(&basis, &w, [0.7, 0.0]).value);
    Ok(())
}
