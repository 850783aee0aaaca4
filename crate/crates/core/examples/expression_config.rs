//! Expressions and run configurations: parse, evaluate, and echo the
//! resolved configuration with every default filled in.
//!
//! ```text
//! cargo run --release --example expression_config
//! ```

use pcma::config::parse_config;
use pcma::expr::{parse_expression, Env};

fn main() -> pcma::Result<()> {
    for text in ["1+2*3^2", "log(abs2)", "max(re2, 0.5*t) - exp(-absz)"] {
        let e = parse_expression(text)?;
        let v = e.eval(&Env { coords: &[(-1f64).exp(), 0.0], t: 0.5 })?;
        println!("{text:<32} prints as {:<36} = {v:.6}", e.to_string());
    }
    match parse_expression("log(") {
        Err(e) => println!("log( -> {e}"),
        Ok(_) => unreachable!(),
    }

    let cfg = parse_config(
        r#"
task = "track"
[problem]
a = 1.0
forcing = "0.1*abs2"
atoms = [{ center = [0.0, 0.0], mass = 1.0 }]
[numerics]
resolution = 65
"#,
    )?;
    print!("{}", cfg.to_toml());
    Ok(())
}
