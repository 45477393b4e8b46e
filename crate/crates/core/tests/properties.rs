//! Randomized checks of the structural properties of the solution.

mod common;

use bequest_opt::analysis::{pi_min, scaling_check};
use bequest_opt::model::MarketParams;
use bequest_opt::solver::{solve, Solution};
use bequest_opt::verify::{hjb_residual, smooth_pasting_check};
use common::interior;
use proptest::prelude::*;

fn market() -> impl Strategy<Value = MarketParams> {
    (
        0.01..0.06f64,
        0.01..0.08f64,
        0.1..0.4f64,
        0.01..0.1f64,
        0.005..0.5f64,
        0.0..0.1f64,
    )
        .prop_map(|(r, excess, sigma, lambda, h, c)| MarketParams {
            r,
            mu: r + excess,
            sigma,
            lambda,
            h,
            b: 1.0,
            c,
        })
}

fn near_pasting(s: &Solution, w: f64) -> bool {
    s.pasting_points()
        .iter()
        .any(|p| (p.w - w).abs() < 1e-6 * s.w_s())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn value_is_increasing_concave_probability(p in market()) {
        let s = solve(&p).unwrap();
        for w in interior(0.0, s.w_s(), 40) {
            let e = s.eval(w).unwrap();
            prop_assert!((0.0..=1.0).contains(&e.phi));
            prop_assert!(e.phi_w > 0.0, "w={w} phi_w={}", e.phi_w);
            prop_assert!(e.phi_ww < 0.0, "w={w} phi_ww={}", e.phi_ww);
        }
    }

    #[test]
    fn hjb_residual_vanishes(p in market()) {
        let s = solve(&p).unwrap();
        for w in interior(0.0, s.w_s(), 40) {
            if !near_pasting(&s, w) {
                let r = hjb_residual(&s, w).unwrap();
                prop_assert!(r.abs() < 1e-8, "w={w} residual {r}");
            }
        }
    }

    #[test]
    fn pasting_is_smooth(p in market()) {
        let s = solve(&p).unwrap();
        for g in smooth_pasting_check(&s) {
            prop_assert!(g.max() < 1e-8, "{g:?}");
        }
    }

    #[test]
    fn scaling_in_goal_and_consumption(p in market(), k in 0.5..10.0f64) {
        prop_assert!(scaling_check(&p, k, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap() < 1e-10);
    }

    #[test]
    fn buy_region_complementarity(p in market()) {
        let s = solve(&p).unwrap();
        for w in interior(0.0, s.w_s().min(p.b), 100) {
            let e = s.eval(w).unwrap();
            let g = p.lambda - p.h * (p.b - w) * e.phi_w;
            if w >= s.w_b {
                prop_assert!(g >= -1e-10, "w={w} g={g}");
            } else {
                prop_assert!(g <= 1e-10, "w={w} g={g}");
            }
        }
    }

    #[test]
    fn insurance_raises_investment_over_minimum_ruin(p in market()) {
        prop_assume!(p.c > 0.0);
        let s = solve(&p).unwrap();
        for w in interior(0.0, s.w_s(), 40) {
            let floor = pi_min(&p, s.derived.p0, w);
            prop_assert!(s.eval(w).unwrap().pi_star >= floor - 1e-10);
        }
    }

    #[test]
    fn investment_falls_with_wealth_in_buy_region(p in market()) {
        let s = solve(&p).unwrap();
        let pts = interior(s.w_b, s.w_s(), 40);
        let pis: Vec<f64> = pts.iter().map(|&w| s.eval(w).unwrap().pi_star).collect();
        for pair in pis.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-10);
        }
    }

    #[test]
    fn dearer_insurance_lowers_value_and_raises_investment(
        p in market(),
        bump in 0.001..0.3f64,
    ) {
        let a = solve(&p).unwrap();
        let b = solve(&p.with_h(p.h + bump)).unwrap();
        for w in interior(0.0, a.w_s().min(b.w_s()), 30) {
            let (x, y) = (a.eval(w).unwrap(), b.eval(w).unwrap());
            prop_assert!(y.phi <= x.phi + 1e-10, "w={w}");
            prop_assert!(y.pi_star >= x.pi_star - 1e-10, "w={w}");
        }
    }

    #[test]
    fn analytic_derivatives_match_differences(p in market()) {
        let s = solve(&p).unwrap();
        let step = 1e-5 * s.w_s();
        for w in interior(0.0, s.w_s(), 20) {
            if w < 2.0 * step || w > s.w_s() - 2.0 * step || near_pasting(&s, w) {
                continue;
            }
            let (lo, mid, hi) = (s.phi(w - step).unwrap(), s.eval(w).unwrap(), s.phi(w + step).unwrap());
            let d1 = (hi - lo) / (2.0 * step);
            let roundoff = 4.0 * f64::EPSILON / step;
            prop_assert!((d1 - mid.phi_w).abs() <= 1e-4 * mid.phi_w.abs() + roundoff, "w={w}");
        }
    }

    #[test]
    fn minimum_ruin_investment_above_goal(p in market()) {
        let s = solve(&p).unwrap();
        prop_assume!(s.regime.above_rb());
        for w in interior(p.b, p.c / p.r, 20) {
            let m = pi_min(&p, s.derived.p0, w);
            let got = s.eval(w).unwrap().pi_star;
            prop_assert!((got - m).abs() <= 1e-12 * m.max(1.0), "w={w}: {got} vs {m}");
        }
    }
}
