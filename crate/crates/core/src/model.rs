//! Market parameters, closed-form constants and regime classification.
//!
//! An investor with wealth `w` consumes at rate `c`, invests `π` in a
//! geometric Brownian motion with drift `μ` and volatility `σ`, keeps the rest
//! at the riskless rate `r`, and may buy instantaneous term life insurance
//! paying `D` at death for a premium `hD`. Death arrives at constant hazard
//! rate `λ`. The goal is to maximize the probability that wealth plus death
//! benefit at death is at least `b`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rootfind::{solve_bracketed, Bracket, RootConfig};

/// The seven exogenous inputs of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Riskless rate per year.
    pub r: f64,
    /// Drift of the risky asset per year.
    pub mu: f64,
    /// Volatility of the risky asset.
    pub sigma: f64,
    /// Hazard rate of death.
    pub lambda: f64,
    /// Premium per dollar of death benefit per year.
    pub h: f64,
    /// Bequest goal.
    pub b: f64,
    /// Consumption rate.
    pub c: f64,
}

impl MarketParams {
    /// Parameters of the worked example used throughout the tests (`c = 0.02`).
    pub fn example() -> Self {
        Self {
            r: 0.03,
            mu: 0.06,
            sigma: 0.20,
            lambda: 0.04,
            h: 0.05,
            b: 1.0,
            c: 0.02,
        }
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }

    pub fn with_b(self, b: f64) -> Self {
        Self { b, ..self }
    }

    /// Checks every parameter, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: &str) -> Error {
            Error::InvalidParam {
                field,
                reason: reason.to_string(),
            }
        }
        let fields = [
            ("r", self.r),
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("lambda", self.lambda),
            ("h", self.h),
            ("b", self.b),
            ("c", self.c),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(bad(name, "must be finite"));
            }
        }
        if self.r <= 0.0 {
            return Err(bad("r", "must be positive"));
        }
        if self.sigma <= 0.0 {
            return Err(bad("sigma", "must be positive"));
        }
        if self.mu <= self.r {
            return Err(bad("mu", "must exceed r"));
        }
        if self.lambda <= 0.0 {
            return Err(bad("lambda", "must be positive"));
        }
        if self.h < 0.0 {
            return Err(bad("h", "must be non-negative"));
        }
        if self.b <= 0.0 {
            return Err(bad("b", "must be positive"));
        }
        if self.c < 0.0 {
            return Err(bad("c", "must be non-negative"));
        }
        if self.h == 0.0 && self.c == 0.0 {
            return Err(bad(
                "c",
                "must be positive when h = 0 (safe level would be 0)",
            ));
        }
        Ok(())
    }

    /// Half the squared Sharpe ratio.
    pub fn m(&self) -> f64 {
        let s = (self.mu - self.r) / self.sigma;
        0.5 * s * s
    }

    /// Merton ratio `(μ − r)/σ²`, the factor in every investment rule.
    pub fn merton(&self) -> f64 {
        (self.mu - self.r) / (self.sigma * self.sigma)
    }

    /// Premium level below which insurance is bought at every wealth when
    /// consumption is high enough.
    pub fn h_threshold(&self) -> f64 {
        self.r * self.lambda / (self.r + self.m())
    }

    /// Safe level: wealth that funds consumption and the premium on the
    /// remaining shortfall forever.
    pub fn safe_level(&self) -> f64 {
        if self.c <= self.r * self.b {
            (self.c + self.h * self.b) / (self.r + self.h)
        } else {
            self.c / self.r
        }
    }
}

/// Every closed-form constant that depends only on the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub m: f64,
    /// Exponent in `(0, 1)` of the power branch below the buy level at `c = 0`.
    pub q: f64,
    /// Exponent `> 1` of the power branch toward the safe level.
    pub p: f64,
    /// `p` at `h = 0`.
    pub p0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Safe level.
    pub w_s: f64,
    /// Consumption above which full insurance from zero wealth is optimal (`c ≤ rb`).
    pub c1: f64,
    /// Consumption above which full insurance below `b` is optimal (`c > rb`).
    /// Present only when `h` exceeds `h_threshold`.
    pub c2: Option<f64>,
    pub h_threshold: f64,
}

/// The larger root of `a x² − s x + k = 0`, with `disc = s² − 4ak` supplied.
fn larger_root(a: f64, s: f64, disc: f64) -> f64 {
    (s + disc.sqrt()) / (2.0 * a)
}

/// Roots of `m x² − d x − λ = 0` ordered (positive, negative), computed
/// without cancellation.
fn dual_roots(m: f64, d: f64, lambda: f64) -> (f64, f64) {
    let s = (d * d + 4.0 * m * lambda).sqrt();
    if d >= 0.0 {
        let x1 = (d + s) / (2.0 * m);
        (x1, -lambda / (m * x1))
    } else {
        let x2 = (d - s) / (2.0 * m);
        (-lambda / (m * x2), x2)
    }
}

/// Computes all derived constants, including `C2` when it exists.
pub fn derive_constants(params: &MarketParams) -> Result<DerivedConstants> {
    params.validate()?;
    let MarketParams {
        r, lambda, h, b, ..
    } = *params;
    let m = params.m();

    // r x² − S x + λ = 0 has roots q < 1 < p0.
    let s0 = r + lambda + m;
    let disc0 = (r - lambda).powi(2) + m * (m + 2.0 * (r + lambda));
    let q = 2.0 * lambda / (s0 + disc0.sqrt());
    let p0 = larger_root(r, s0, disc0);

    let rh = r + h;
    let sh = rh + lambda + m;
    let disch = (rh - lambda).powi(2) + m * (m + 2.0 * (rh + lambda));
    let p = larger_root(rh, sh, disch);

    let (alpha1, alpha2) = dual_roots(m, r - lambda + m, lambda);
    let (beta1, beta2) = dual_roots(m, rh - lambda + m, lambda);

    let c1 = h * b * (rh * p / lambda - 1.0);
    let h_threshold = params.h_threshold();

    let mut d = DerivedConstants {
        m,
        q,
        p,
        p0,
        alpha1,
        alpha2,
        beta1,
        beta2,
        w_s: params.safe_level(),
        c1,
        c2: None,
        h_threshold,
    };
    if h > h_threshold {
        d.c2 = Some(find_c2(params, &d)?);
    }
    Ok(d)
}

/// `g(β) = r − (r + h) β / α₁ + h β`.
pub fn g_func(beta: f64, params: &MarketParams, derived: &DerivedConstants) -> f64 {
    params.r - (params.r + params.h) * beta / derived.alpha1 + params.h * beta
}

/// `ℓ(α, β) = β − (h β / λ + 1) α`.
pub fn ell_func(alpha: f64, beta: f64, params: &MarketParams) -> f64 {
    beta - (params.h * beta / params.lambda + 1.0) * alpha
}

/// Difference of the two sides of the equation defining `C2`, as a function
/// of consumption. Increasing in `c`.
pub(crate) fn c2_residual(c: f64, params: &MarketParams, d: &DerivedConstants) -> f64 {
    let MarketParams {
        r, h, b, lambda, ..
    } = *params;
    let (b1, b2) = (d.beta1, d.beta2);
    let g1 = g_func(b1, params, d);
    let g2 = g_func(b2, params, d);
    let kappa = (c - r * b) / (r * (r + h));
    let ws = (c + h * b) / (r + h);
    let hbl = h * b / lambda;
    let inner = kappa * g2 / (hbl * b2 + ws * (1.0 - b2));
    let lhs = kappa * inner.powf((1.0 - b2) / (b1 - 1.0));
    let rhs = (hbl * b1 - ws * (b1 - 1.0)) / g1;
    lhs - rhs
}

/// Solves for the consumption threshold `C2 ∈ (rb, C1)`.
///
/// Only defined when `h` exceeds `r λ / (r + m)`.
pub fn find_c2(params: &MarketParams, derived: &DerivedConstants) -> Result<f64> {
    if !(params.h > derived.h_threshold) {
        return Err(Error::Domain(format!(
            "C2 exists only for h > {} (got h = {})",
            derived.h_threshold, params.h
        )));
    }
    let lo = params.r * params.b * (1.0 + 1e-12);
    let f = |c: f64| c2_residual(c, params, derived);
    let f_lo = f(lo);
    // When β₁ is close to 1 the gap C1 − C2 can fall below double precision,
    // so the upper end is the last float below C1 rather than a fixed margin.
    let hi = derived.c1 * (1.0 - f64::EPSILON);
    let f_hi = f(hi);
    if f_lo < 0.0 && f_hi <= 0.0 && f_hi > -1e-9 * f_lo.abs().max(1.0) {
        return Ok(hi);
    }
    let bracket = Bracket::from_values(lo, hi, f_lo, f_hi)?;
    Ok(solve_bracketed(f, bracket, &RootConfig::machine())?)
}

/// Which solution family applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `c = 0`: closed-form power branches on both sides of the buy level.
    ZeroConsumption,
    /// `C1 ≤ c ≤ rb`: insure at every wealth, single power branch.
    FullInsuranceBelowSafe,
    /// `0 < c ≤ rb`, `c < C1`: positive buy level below the safe level.
    BuyLevelBelowBequestCLow,
    /// `c > rb` with cheap insurance or `c ≥ C2`: insure at every wealth below `b`.
    FullInsuranceBelowBequest,
    /// `rb < c < C2`: positive buy level below `b`.
    BuyLevelAboveRb,
    /// `h = 0`: free insurance, the problem collapses to minimizing ruin.
    RuinLimitHZero,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::ZeroConsumption,
        Regime::FullInsuranceBelowSafe,
        Regime::BuyLevelBelowBequestCLow,
        Regime::FullInsuranceBelowBequest,
        Regime::BuyLevelAboveRb,
        Regime::RuinLimitHZero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::ZeroConsumption => "ZeroConsumption",
            Regime::FullInsuranceBelowSafe => "FullInsuranceBelowSafe",
            Regime::BuyLevelBelowBequestCLow => "BuyLevelBelowBequestCLow",
            Regime::FullInsuranceBelowBequest => "FullInsuranceBelowBequest",
            Regime::BuyLevelAboveRb => "BuyLevelAboveRb",
            Regime::RuinLimitHZero => "RuinLimitHZero",
        }
    }

    /// Regimes in which consumption exceeds `rb` and `b` is an interior pasting point.
    pub fn above_rb(&self) -> bool {
        matches!(
            self,
            Regime::FullInsuranceBelowBequest | Regime::BuyLevelAboveRb
        )
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Picks the solution family for a valid parameter set.
pub fn classify_regime(params: &MarketParams, derived: &DerivedConstants) -> Regime {
    let MarketParams { r, h, b, c, .. } = *params;
    if h == 0.0 {
        return Regime::RuinLimitHZero;
    }
    if c == 0.0 {
        return Regime::ZeroConsumption;
    }
    if c <= r * b {
        if h <= derived.h_threshold && c >= derived.c1 {
            Regime::FullInsuranceBelowSafe
        } else {
            Regime::BuyLevelBelowBequestCLow
        }
    } else {
        match derived.c2 {
            Some(c2) if c < c2 => Regime::BuyLevelAboveRb,
            _ => Regime::FullInsuranceBelowBequest,
        }
    }
}
