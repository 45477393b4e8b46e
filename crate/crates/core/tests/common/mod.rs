//! Parameter sets shared by the integration tests.
#![allow(dead_code)]

use bequest_opt::model::{MarketParams, Regime};

/// The reference market: r=0.03, μ=0.06, σ=0.2, λ=0.04, h=0.05, b=1, c=0.02.
pub fn base() -> MarketParams {
    MarketParams::example()
}

/// One parameter set per regime with `h > 0`.
pub fn regime_cases() -> Vec<(Regime, MarketParams)> {
    let ex = base();
    vec![
        (Regime::ZeroConsumption, ex.with_c(0.0)),
        (Regime::FullInsuranceBelowSafe, ex.with_h(0.02)),
        (Regime::BuyLevelBelowBequestCLow, ex),
        (Regime::FullInsuranceBelowBequest, ex.with_c(0.07)),
        (Regime::BuyLevelAboveRb, ex.with_c(0.05)),
    ]
}

/// `n` evenly spaced points strictly inside `(lo, hi)`.
pub fn interior(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64)
        .collect()
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
