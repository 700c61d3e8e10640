mod common;

use common::{small_program, vertex_minimum};
use proptest::prelude::*;
use qkd_core::lp::{solve_min, LpStatus};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn simplex_matches_vertex_enumeration(lp in small_program()) {
        let sol = solve_min(&lp).unwrap();
        match vertex_minimum(&lp) {
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            Some(v) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.value - v).abs() <= 1e-8 * (1.0 + v.abs()),
                    "simplex {} vs oracle {}", sol.value, v);
                prop_assert!(lp.max_violation(&sol.point) <= 1e-9);
                prop_assert!((lp.evaluate(&sol.point) - sol.value).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}
