//! Binary field files and CSV series: a bit-exact round trip through the
//! 64-byte-header field format and a tracking series on disk.
//!
//! ```text
//! cargo run --release --example field_io -- [DIR]
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use pcma::grid::{build_grid, DomainSpec};
use pcma::initial::{Atom, SingularPotential};
use pcma::io::{read_field, series_csv, write_field};
use pcma::lelong::{NuSample, Resolution, SingularityRecord};
use pcma::Const;

fn main() -> pcma::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("pcma-field-io"), PathBuf::from);
    let g = build_grid(&DomainSpec::disc(), 65)?;
    let pot = SingularPotential::new(vec![Atom::new(&[0.2, 0.0], 1.0)], Arc::new(Const(0.0)));
    let u = pot.sample(&g);
    let path = dir.join("u0.pcma");
    write_field(&g, &u, &path)?;
    let (header, back) = read_field(&path)?;
    let identical = back.values.iter().zip(&u.values).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("{} bytes, header {header:?}", std::fs::metadata(&path)?.len());
    println!("bit-identical: {identical}; floor nodes: {}", back.floor.iter().filter(|&&f| f).count());

    let rec = SingularityRecord {
        a: [0.2, 0.0, 0.0, 0.0],
        nu0: 1.0,
        series: vec![
            NuSample { t: 0.0, u_at_atom: -40.0, nu_hat: 1.0, raw: 1.0 },
            NuSample { t: 0.5, u_at_atom: -3.0, nu_hat: 0.01, raw: 0.01 },
        ],
        resolution: Resolution::Resolved { t: 0.5, previous: 0.0 },
        bound_lo: 0.5,
        bound_hi: 0.5,
        snap_distance: 0.0,
        snapshot_dt: 0.5,
    };
    print!("{}", series_csv(&[rec]));
    Ok(())
}
