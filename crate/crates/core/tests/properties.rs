//! Property checks across modules.

use pcma::config::{parse_config, RunConfig, Task};
use pcma::expr::{parse_expression, Env};
use pcma::grid::{build_grid, DomainSpec, ScalarField};
use pcma::io::{decode_field, encode_field, render, FieldHeader};
use pcma::theory::{epsilon_a, time_backward, time_forward};
use proptest::prelude::*;

proptest! {
    #[test]
    fn time_change_round_trips(a in 0.0f64..3.0, t in 0.0f64..2.0) {
        let back = time_backward(a, time_forward(a, t));
        prop_assert!((back - t).abs() <= 1e-12 * (1.0 + t));
    }

    #[test]
    fn decay_shortens_resolution(a in 1e-6f64..5.0, n in 1usize..3, x in 1e-3f64..10.0) {
        let with = epsilon_a(a, n, x).unwrap();
        let without = epsilon_a(0.0, n, x).unwrap();
        prop_assert!(with < without);
        prop_assert!(epsilon_a(a, n, 1.01 * x).unwrap() > with);
    }

    #[test]
    fn rendered_numbers_parse_back_exactly(v in prop::num::f64::NORMAL) {
        prop_assert_eq!(render(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn field_bytes_round_trip(values in prop::collection::vec(-60.0f64..10.0, 17 * 17), t in 0.0f64..1.0) {
        let g = build_grid(&DomainSpec::disc(), 17).unwrap();
        let mut u = ScalarField::zeros(&g);
        u.values = values;
        u.clip(40.0);
        u.time = t;
        let (h, back) = decode_field(&encode_field(&FieldHeader::of(&g, &u), &u.values)).unwrap();
        prop_assert_eq!(h.time.to_bits(), t.to_bits());
        prop_assert_eq!(back.floor, u.floor);
        prop_assert!(back.values.iter().zip(&u.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn printed_expressions_reparse_to_the_same_value(
        c in prop::array::uniform3(-3.0f64..3.0),
        x in prop::array::uniform2(-0.9f64..0.9),
        t in 0.0f64..1.0,
    ) {
        let text = format!("{}*x1^2 - {}*t + exp({}*absz) / (1 + abs2)", c[0], c[1], c[2]);
        let e = parse_expression(&text).unwrap();
        let again = parse_expression(&e.to_string()).unwrap();
        let env = Env { coords: &x, t };
        prop_assert_eq!(e.eval(&env).unwrap().to_bits(), again.eval(&env).unwrap().to_bits());
    }

    #[test]
    fn configuration_echo_is_stable(a in 0.0f64..2.0, res in 8usize..40, stride in 1usize..50) {
        let mut cfg = RunConfig::new(Task::Verify);
        cfg.problem.a = a;
        cfg.numerics.resolution = 2 * res + 1;
        cfg.numerics.stride = stride;
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
