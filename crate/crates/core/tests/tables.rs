//! Reference-table cells and the evidence behind the cells that differ.

mod common;

use bequest_opt::analysis::{
    consumption_table, premium_table, RowSource, GOLDEN_CONSUMPTION, GOLDEN_PREMIUM,
};
use bequest_opt::model::derive_constants;
use bequest_opt::solver::solve;
use bequest_opt::verify::{fd_extract_pi, fd_solve, FdConfig};
use common::{base, round3};

fn cells3(row: &bequest_opt::analysis::TableRow) -> Vec<f64> {
    row.cells().iter().map(|&x| round3(x)).collect()
}

#[test]
fn thresholds_to_four_decimals() {
    let d = derive_constants(&base()).unwrap();
    assert_eq!((d.c1 * 1e4).round() / 1e4, 0.0736);
    assert_eq!((d.c2.unwrap() * 1e4).round() / 1e4, 0.0629);
}

#[test]
fn consumption_rows_at_or_below_rb() {
    let t = consumption_table().unwrap();
    for (row, g) in t.rows.iter().zip(&GOLDEN_CONSUMPTION).take(6) {
        let want = [g.1, g.2, g.3[0], g.3[1], g.3[2], g.3[3], g.3[4]];
        for (j, (a, b)) in row.cells().iter().zip(want).enumerate() {
            let skip = g.0 == 0.005 && (j == 2 || j == 4);
            if !skip {
                assert!((a - b).abs() <= 0.0005, "c={} col {j}: {a} vs {b}", g.0);
            }
        }
    }
    assert_eq!(
        cells3(&t.rows[3]),
        vec![0.397, 0.750, 0.748, 0.983, 0.794, 0.159, 0.0]
    );
}

#[test]
fn buy_and_safe_levels_match_for_every_consumption_rate() {
    let t = consumption_table().unwrap();
    for (row, g) in t.rows.iter().zip(&GOLDEN_CONSUMPTION) {
        assert!((row.w_b - g.1).abs() <= 0.0005, "c={}", g.0);
        assert!((row.w_s - g.2).abs() <= 0.0005, "c={}", g.0);
    }
}

/// Above `rb` the printed investment amounts differ from the closed form by
/// up to 0.07, while a finite-difference solve of the same problem agrees
/// with the closed form to 2e-3.
#[test]
fn investment_above_rb_is_confirmed_by_finite_differences() {
    let t = consumption_table().unwrap();
    for row in t.rows.iter().filter(|r| r.param >= 0.04) {
        let p = base().with_c(row.param);
        let fd = fd_solve(
            &p,
            &FdConfig {
                n_grid: 4000,
                ..FdConfig::default()
            },
        )
        .unwrap();
        for (k, &w) in [0.1, 0.3, 0.5, 0.7, 0.9].iter().enumerate() {
            let fd_pi = fd_extract_pi(&fd, &p, w);
            assert!(
                (fd_pi - row.pi[k]).abs() < 2e-3,
                "c={} w={w}: {} vs fd {fd_pi}",
                row.param,
                row.pi[k]
            );
        }
    }
}

#[test]
fn premium_rows() {
    let t = premium_table(&FdConfig::default()).unwrap();
    assert_eq!(
        cells3(&t.rows[2]),
        vec![0.0, 0.800, 1.078, 0.770, 0.462, 0.154, 0.0]
    );
    assert_eq!(round3(t.rows[0].pi[2]), 0.118);
    assert_eq!(round3(t.rows[0].pi[0]), 0.400);
    assert!((t.rows[1].pi[3] - 0.0544).abs() <= 0.00005);
    for (row, g) in t.rows.iter().zip(&GOLDEN_PREMIUM) {
        assert!((row.w_s - g.2).abs() <= 0.0005, "h={}", g.0);
        if g.0 >= 0.03 {
            assert_eq!(round3(row.pi[0]), 1.407);
        }
    }
}

#[test]
fn no_insurance_row_from_fd_oracle() {
    let t = premium_table(&FdConfig::default()).unwrap();
    let last = t.rows.last().unwrap();
    assert_eq!(last.source, RowSource::FdOracle);
    assert!(last.param.is_infinite());
    let want = [1.0, 1.0, 1.407, 1.600, 1.833, 2.106, 2.406];
    for (a, b) in last.cells().iter().zip(want) {
        assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }
}

/// The value 1.600 printed for π*(0.3) in the rows h ≥ 0.05 equals neither
/// the closed form (1.5967) nor the h = 0.5 solution; every such row agrees
/// with the no-insurance FD solve to 1e-3.
#[test]
fn investment_at_point_three_is_common_to_large_premiums() {
    let ex = base();
    let fd = fd_solve(
        &ex,
        &FdConfig {
            insurance_allowed: false,
            n_grid: 4000,
            ..FdConfig::default()
        },
    )
    .unwrap();
    let fd_pi = fd_extract_pi(&fd, &ex, 0.3);
    for h in [0.05, 0.1, 0.2, 0.5] {
        let pi = solve(&ex.with_h(h)).unwrap().eval(0.3).unwrap().pi_star;
        assert!((pi - 1.59668).abs() < 1e-5);
        assert!((pi - fd_pi).abs() < 1e-3);
    }
}

/// Inside the buy region with `c ≤ rb`, π* = V (w_s − w)/(p − 1) with one
/// exponent `p` for every consumption rate. Each reference cell there implies
/// a value of `p − 1`; all agree with the solver except c = 0.005, w = 0.5.
#[test]
fn buy_region_cells_share_one_exponent() {
    let ex = base();
    let p_minus_1 = derive_constants(&ex).unwrap().p - 1.0;
    let mut outliers = Vec::new();
    for g in GOLDEN_CONSUMPTION.iter().filter(|g| g.0 <= ex.r * ex.b) {
        let s = solve(&ex.with_c(g.0)).unwrap();
        for (k, &w) in [0.1, 0.3, 0.5, 0.7, 0.9].iter().enumerate() {
            if w < s.w_b || w >= s.w_s() {
                continue;
            }
            let implied = ex.merton() * (s.w_s() - w) / g.3[k];
            if (implied - p_minus_1).abs() > 1e-3 {
                outliers.push((g.0, w));
            }
        }
    }
    assert_eq!(outliers, vec![(0.005, 0.5)]);
}

/// The row c = 0.02 of the consumption table and the row h = 0.05 of the
/// premium table describe the same market but print different w_b and
/// π*(0.3). The solver reproduces the consumption-table version.
#[test]
fn shared_row_differs_between_reference_tables() {
    let (a, b) = (GOLDEN_CONSUMPTION[4], GOLDEN_PREMIUM[5]);
    assert_eq!((a.0, b.0), (0.02, 0.05));
    assert_eq!(base().c, 0.02);
    assert_eq!(base().h, 0.05);
    assert_ne!(a.1, b.1);
    assert_ne!(a.3[1], b.3[1]);
    let s = solve(&base()).unwrap();
    assert!((s.w_b - a.1).abs() <= 0.0005);
    assert!((s.eval(0.3).unwrap().pi_star - a.3[1]).abs() <= 0.0005);
}
