//! Value function and optimal controls for every regime.
//!
//! A [`Solution`] stores the regime's free parameters and splits `[0, w_s]`
//! into segments. Each segment carries one closed form for φ: an explicit
//! power law in wealth, or a parametric form in the dual variable `y = φ_w`
//! that has to be inverted numerically for a given wealth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    classify_regime, derive_constants, ell_func, g_func, DerivedConstants, MarketParams, Regime,
};
use crate::rootfind::{
    expand_bracket_down, expand_bracket_up, solve_bracketed, Bracket, RootConfig,
};

/// Dual-variable parameters. Which ones are present depends on the regime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DualParams {
    /// `y_b / y_0`.
    pub y_b0: Option<f64>,
    /// `y_g / y_0` (full insurance below `b`).
    pub y_g0: Option<f64>,
    /// `y_b / y_g`.
    pub y_bg: Option<f64>,
    /// Marginal value at zero wealth.
    pub y_0: Option<f64>,
    /// Marginal value at the buy level.
    pub y_b: Option<f64>,
    /// Marginal value at `w = b`.
    pub y_g: Option<f64>,
}

/// φ and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivs {
    pub phi: f64,
    pub phi_w: f64,
    pub phi_ww: f64,
}

/// One closed form of φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    /// `φ = coef · (w / w_ref)^e` with `0 < e < 1`.
    PowerBelow { coef: f64, w_ref: f64, e: f64 },
    /// `φ = 1 − coef · ((top − w) / (top − w_ref))^e` with `e > 1`.
    PowerToSafe {
        coef: f64,
        top: f64,
        w_ref: f64,
        e: f64,
    },
    /// Dual form in `z = y / y_0 ∈ [z_hi, 1]`; `z = 1` at zero wealth and
    /// `z = z_hi` at the upper end of the segment.
    DualAlpha { y0: f64, z_hi: f64 },
    /// Dual form in `u = y / y_g ∈ [1, u_lo]`; `u = 1` at `w = b` and
    /// `u = u_lo` at the lower end of the segment.
    DualBeta { y_g: f64, u_lo: f64 },
}

/// A wealth interval `[lo, hi)` on which φ has one closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub branch: Branch,
}

/// The optimal strategy and value function for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub regime: Regime,
    pub params: MarketParams,
    pub derived: DerivedConstants,
    /// Smallest wealth at which buying full insurance `b − w` is optimal.
    pub w_b: f64,
    pub dual: DualParams,
    pub segments: Vec<Segment>,
}

/// Strategy and value at one wealth level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyEval {
    pub w: f64,
    /// Dual variable, present on dual branches (equals `phi_w`).
    pub y: Option<f64>,
    pub phi: f64,
    pub phi_w: f64,
    pub phi_ww: f64,
    /// Dollar amount in the risky asset.
    pub pi_star: f64,
    /// Death benefit.
    pub d_star: f64,
}

/// Constants shared by the dual forms.
#[derive(Debug, Clone, Copy)]
struct Shape {
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
    /// `α₁(1 − α₂)/(α₁ − α₂)`.
    ca: f64,
    /// `α₂(α₁ − 1)/(α₁ − α₂)`.
    cb: f64,
    /// `(α₁ − 1)(1 − α₂)/(α₁ − α₂)`.
    ck: f64,
    /// `c / r`.
    cr: f64,
    /// `(c − rb)/(r(r + h))`.
    kappa: f64,
    /// `(c + hb)/(r + h)`.
    wsp: f64,
    g1: f64,
    g2: f64,
}

impl Shape {
    fn new(p: &MarketParams, d: &DerivedConstants) -> Self {
        let (a1, a2) = (d.alpha1, d.alpha2);
        let da = a1 - a2;
        Self {
            a1,
            a2,
            b1: d.beta1,
            b2: d.beta2,
            ca: a1 * (1.0 - a2) / da,
            cb: a2 * (a1 - 1.0) / da,
            ck: (a1 - 1.0) * (1.0 - a2) / da,
            cr: p.c / p.r,
            kappa: (p.c - p.r * p.b) / (p.r * (p.r + p.h)),
            wsp: (p.c + p.h * p.b) / (p.r + p.h),
            g1: g_func(d.beta1, p, d),
            g2: g_func(d.beta2, p, d),
        }
    }

    /// `A z^{α₁−1} + B z^{α₂−1}` with `z = e^t`; equals `1 − w r / c`.
    fn alpha_level(&self, t: f64) -> f64 {
        self.ca * ((self.a1 - 1.0) * t).exp() + self.cb * ((self.a2 - 1.0) * t).exp()
    }

    /// Wealth on the α-branch at `z = e^t`.
    fn alpha_wealth(&self, t: f64) -> f64 {
        self.cr * (1.0 - self.alpha_level(t))
    }

    fn alpha_derivs(&self, y0: f64, t: f64) -> Derivs {
        let z = t.exp();
        let e1 = ((self.a1 - 1.0) * t).exp();
        let e2 = ((self.a2 - 1.0) * t).exp();
        let y = y0 * z;
        let phi = self.cr * self.ck * (-e1 + e2) * z * y0;
        let slope = self.cr * self.ck * (-self.a1 * e1 + self.a2 * e2);
        Derivs {
            phi,
            phi_w: y,
            phi_ww: y / slope,
        }
    }

    /// Wealth on the β-branch at `u = e^t`.
    fn beta_wealth(&self, t: f64) -> f64 {
        let db = self.b1 - self.b2;
        let e1 = ((self.b1 - 1.0) * t).exp();
        let e2 = ((self.b2 - 1.0) * t).exp();
        self.wsp - self.kappa * (self.b1 / db * self.g2 * e1 - self.b2 / db * self.g1 * e2)
    }

    /// `β₁(β₁−1)G₂u^{β₁−1} + β₂(1−β₂)G₁u^{β₂−1}`, all over `β₁ − β₂`.
    fn beta_curvature(&self, t: f64) -> f64 {
        let db = self.b1 - self.b2;
        let e1 = ((self.b1 - 1.0) * t).exp();
        let e2 = ((self.b2 - 1.0) * t).exp();
        (self.b1 * (self.b1 - 1.0) * self.g2 * e1 + self.b2 * (1.0 - self.b2) * self.g1 * e2) / db
    }

    fn beta_derivs(&self, y_g: f64, t: f64) -> Derivs {
        let db = self.b1 - self.b2;
        let u = t.exp();
        let y = y_g * u;
        let e1 = (self.b1 * t).exp();
        let e2 = (self.b2 * t).exp();
        let bracket = (self.b1 - 1.0) / db * self.g2 * e1 + (1.0 - self.b2) / db * self.g1 * e2;
        Derivs {
            phi: 1.0 - self.kappa * bracket * y_g,
            phi_w: y,
            phi_ww: -y / (self.kappa * self.beta_curvature(t)),
        }
    }
}

fn root_cfg() -> RootConfig {
    RootConfig::machine()
}

/// Root of `f` on `[lo, hi]`, accepting an endpoint whose residual is within
/// `slack` of zero. Segment ends are computed from the dual parameters, so a
/// wealth exactly at an end can miss the bracket by a rounding error.
fn solve_clamped<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, slack: f64) -> Result<f64> {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo.abs() <= slack && f_lo.abs() <= f_hi.abs() {
        return Ok(lo);
    }
    if f_hi.abs() <= slack {
        return Ok(hi);
    }
    let b = Bracket::from_values(lo, hi, f_lo, f_hi)?;
    Ok(solve_bracketed(f, b, &root_cfg())?)
}

/// Builds the solution for any valid parameter set.
pub fn solve(params: &MarketParams) -> Result<Solution> {
    let derived = derive_constants(params)?;
    match classify_regime(params, &derived) {
        Regime::ZeroConsumption => solve_zero_consumption(params, &derived),
        Regime::FullInsuranceBelowSafe => solve_full_insurance(params, &derived),
        Regime::BuyLevelBelowBequestCLow => solve_buy_level_low_c(params, &derived),
        Regime::FullInsuranceBelowBequest => solve_full_insurance_above_rb(params, &derived),
        Regime::BuyLevelAboveRb => solve_buy_level_above_rb(params, &derived),
        Regime::RuinLimitHZero => solve_h_zero(params, &derived),
    }
}

fn mismatch(what: &str, p: &MarketParams) -> Error {
    Error::RegimeMismatch(format!(
        "{what} (h = {}, c = {}, rb = {})",
        p.h,
        p.c,
        p.r * p.b
    ))
}

/// `c = 0`: power law below the buy level, power law toward the safe level above it.
pub fn solve_zero_consumption(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    if p.c != 0.0 || p.h <= 0.0 {
        return Err(mismatch(
            "zero-consumption solution needs c = 0 and h > 0",
            p,
        ));
    }
    let (q, pe, ws) = (d.q, d.p, d.w_s);
    let w_b = (1.0 - q) / (pe - q) * ws;
    let segments = vec![
        Segment {
            lo: 0.0,
            hi: w_b,
            branch: Branch::PowerBelow {
                coef: pe * (1.0 - q) / (pe - q),
                w_ref: w_b,
                e: q,
            },
        },
        Segment {
            lo: w_b,
            hi: ws,
            branch: Branch::PowerToSafe {
                coef: q * (pe - 1.0) / (pe - q),
                top: ws,
                w_ref: w_b,
                e: pe,
            },
        },
    ];
    Ok(Solution {
        regime: Regime::ZeroConsumption,
        params: *p,
        derived: *d,
        w_b,
        dual: DualParams::default(),
        segments,
    })
}

/// `C1 ≤ c ≤ rb` with cheap insurance: insure at every wealth level.
pub fn solve_full_insurance(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    let rb = p.r * p.b;
    if !(p.h > 0.0 && p.h <= d.h_threshold && p.c >= d.c1 && p.c <= rb && p.c > 0.0) {
        return Err(mismatch(
            "full insurance below the safe level needs C1 <= c <= rb",
            p,
        ));
    }
    Ok(Solution {
        regime: Regime::FullInsuranceBelowSafe,
        params: *p,
        derived: *d,
        w_b: 0.0,
        dual: DualParams::default(),
        segments: vec![Segment {
            lo: 0.0,
            hi: d.w_s,
            branch: Branch::PowerToSafe {
                coef: 1.0,
                top: d.w_s,
                w_ref: 0.0,
                e: d.p,
            },
        }],
    })
}

/// Solves the dual equation for `y_b0 ∈ (0, 1)` when `0 < c ≤ rb`, `c < C1`.
fn solve_yb0_low_c(s: &Shape, p: &MarketParams, d: &DerivedConstants) -> Result<f64> {
    let rhs = (s.b1 - 1.0) * (1.0 - d.w_s / s.cr);
    let f = |t: f64| {
        s.ca * (s.b1 - s.a1) * ((s.a1 - 1.0) * t).exp()
            + s.cb * (s.b1 - s.a2) * ((s.a2 - 1.0) * t).exp()
            - rhs
    };
    let f0 = f(0.0);
    if !(f0 > 0.0) {
        return Err(mismatch("no interior buy level: c is at or above C1", p));
    }
    let bracket = expand_bracket_down(f, 0.0, f0, 4096.0)?;
    Ok(solve_bracketed(f, bracket, &root_cfg())?.exp())
}

/// `y_b` from `λ / (h y_b) = b − w_b`.
fn y_b_from_buy_level(p: &MarketParams, w_b: f64) -> f64 {
    p.lambda / (p.h * (p.b - w_b))
}

/// `0 < c ≤ rb`, `c < C1`: dual branch below the buy level, power law above.
pub fn solve_buy_level_low_c(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    if !(p.h > 0.0 && p.c > 0.0 && p.c <= p.r * p.b && p.c < d.c1) {
        return Err(mismatch(
            "interior buy level below the safe level needs 0 < c <= rb, c < C1",
            p,
        ));
    }
    let s = Shape::new(p, d);
    let y_b0 = solve_yb0_low_c(&s, p, d)?;
    let t_b = y_b0.ln();
    let w_b = s.alpha_wealth(t_b);
    let y_b = y_b_from_buy_level(p, w_b);
    let y_0 = y_b / y_b0;
    let ws = d.w_s;
    let segments = vec![
        Segment {
            lo: 0.0,
            hi: w_b,
            branch: Branch::DualAlpha {
                y0: y_0,
                z_hi: y_b0,
            },
        },
        Segment {
            lo: w_b,
            hi: ws,
            branch: Branch::PowerToSafe {
                coef: p.lambda / (p.h * d.p) * (ws - w_b) / (p.b - w_b),
                top: ws,
                w_ref: w_b,
                e: d.p,
            },
        },
    ];
    Ok(Solution {
        regime: Regime::BuyLevelBelowBequestCLow,
        params: *p,
        derived: *d,
        w_b,
        dual: DualParams {
            y_b0: Some(y_b0),
            y_0: Some(y_0),
            y_b: Some(y_b),
            ..DualParams::default()
        },
        segments,
    })
}

/// Explicit branch on `[b, c/r]` shared by both `c > rb` regimes.
fn above_b_segment(p: &MarketParams, d: &DerivedConstants, y_g: f64) -> Segment {
    let cr = p.c / p.r;
    Segment {
        lo: p.b,
        hi: cr,
        branch: Branch::PowerToSafe {
            coef: (cr - p.b) * y_g / d.p0,
            top: cr,
            w_ref: p.b,
            e: d.p0,
        },
    }
}

/// `c > rb` and (`h ≤ rλ/(r+m)` or `c ≥ C2`): insure at every wealth below `b`.
pub fn solve_full_insurance_above_rb(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    let ok = p.h > 0.0
        && p.c > p.r * p.b
        && match d.c2 {
            None => p.h <= d.h_threshold,
            Some(c2) => p.c >= c2,
        };
    if !ok {
        return Err(mismatch(
            "full insurance below b needs c > rb and c >= C2",
            p,
        ));
    }
    let s = Shape::new(p, d);
    let db = s.b1 - s.b2;
    // κ[β₁G₂ y^{1−β₁} − β₂G₁ y^{1−β₂}]/(β₁−β₂) = w_s', decreasing in y.
    let f = |t: f64| {
        s.kappa
            * (s.b1 / db * s.g2 * ((1.0 - s.b1) * t).exp()
                - s.b2 / db * s.g1 * ((1.0 - s.b2) * t).exp())
            - s.wsp
    };
    let f0 = f(0.0);
    let bracket = expand_bracket_down(f, 0.0, f0, 4096.0)?;
    let y_g0 = solve_bracketed(f, bracket, &root_cfg())?.exp();
    let inv_y0 = s.wsp * (s.b1 - 1.0) / s.b1 + s.kappa * (s.g1 / s.b1) * y_g0.powf(1.0 - s.b2);
    let y_0 = 1.0 / inv_y0;
    let y_g = y_0 * y_g0;
    let segments = vec![
        Segment {
            lo: 0.0,
            hi: p.b,
            branch: Branch::DualBeta {
                y_g,
                u_lo: 1.0 / y_g0,
            },
        },
        above_b_segment(p, d, y_g),
    ];
    Ok(Solution {
        regime: Regime::FullInsuranceBelowBequest,
        params: *p,
        derived: *d,
        w_b: 0.0,
        dual: DualParams {
            y_g0: Some(y_g0),
            y_0: Some(y_0),
            y_g: Some(y_g),
            ..DualParams::default()
        },
        segments,
    })
}

/// The two factors in the equation for `y_bg`, as functions of `x = y_b/y_g`.
struct YbgTerms {
    h: f64,
    r_over_l: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
    l11: f64,
    l12: f64,
    l21: f64,
    l22: f64,
    g1: f64,
    g2: f64,
}

impl YbgTerms {
    fn t1(&self, t: f64) -> f64 {
        let db = self.b1 - self.b2;
        self.h * ((self.a1 - 1.0) - self.r_over_l * self.a1)
            - self.l11 * self.g2 / db * ((self.b1 - 1.0) * t).exp()
            + self.l12 * self.g1 / db * ((self.b2 - 1.0) * t).exp()
    }

    fn t2(&self, t: f64) -> f64 {
        let db = self.b1 - self.b2;
        self.h * ((1.0 - self.a2) + self.r_over_l * self.a2)
            + self.l21 * self.g2 / db * ((self.b1 - 1.0) * t).exp()
            - self.l22 * self.g1 / db * ((self.b2 - 1.0) * t).exp()
    }
}

/// `rb < c < C2`: dual branches on `[0, w_b)` and `[w_b, b)`, power law on `[b, c/r]`.
pub fn solve_buy_level_above_rb(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    let ok = p.h > 0.0 && p.c > p.r * p.b && matches!(d.c2, Some(c2) if p.c < c2);
    if !ok {
        return Err(mismatch("interior buy level below b needs rb < c < C2", p));
    }
    let s = Shape::new(p, d);
    let terms = YbgTerms {
        h: p.h,
        r_over_l: p.r / p.lambda,
        a1: s.a1,
        a2: s.a2,
        b1: s.b1,
        b2: s.b2,
        l11: ell_func(s.a1, s.b1, p),
        l12: ell_func(s.a1, s.b2, p),
        l21: ell_func(s.a2, s.b1, p),
        l22: ell_func(s.a2, s.b2, p),
        g1: s.g1,
        g2: s.g2,
    };
    let (a1, a2) = (s.a1, s.a2);
    let big_f = (p.c - p.r * p.b) / (p.c * (p.r + p.h));
    let constant =
        (a1 - a2) * big_f.ln() - (a1 - 1.0) * (a1 - 1.0).ln() - (1.0 - a2) * (1.0 - a2).ln();
    // Log form of the y_bg equation in t = ln x; T1 vanishes at x = 1, so
    // non-positive values are the −∞ end of an increasing function.
    let e = |t: f64| {
        let t1 = terms.t1(t);
        if t1 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        constant + (a1 - 1.0) * t1.ln() + (1.0 - a2) * terms.t2(t).ln()
    };
    let mut t_lo = 1e-3;
    while e(t_lo) > 0.0 {
        t_lo *= 0.5;
        if t_lo < 1e-300 {
            return Err(mismatch("y_bg equation has no root above 1", p));
        }
    }
    let bracket = expand_bracket_up(e, t_lo, 2.0)?;
    let y_bg = solve_bracketed(e, bracket, &root_cfg())?.exp();
    let t_bg = y_bg.ln();
    let y_b0 = (s.kappa * terms.t2(t_bg) / (s.cr * (1.0 - a2))).powf(1.0 / (a1 - 1.0));
    if !(y_b0 > 0.0 && y_b0 < 1.0) {
        return Err(mismatch("y_b0 outside (0, 1)", p));
    }
    let w_b = s.alpha_wealth(y_b0.ln());
    let y_b = y_b_from_buy_level(p, w_b);
    let y_g = y_b / y_bg;
    let y_0 = y_b / y_b0;
    let segments = vec![
        Segment {
            lo: 0.0,
            hi: w_b,
            branch: Branch::DualAlpha {
                y0: y_0,
                z_hi: y_b0,
            },
        },
        Segment {
            lo: w_b,
            hi: p.b,
            branch: Branch::DualBeta { y_g, u_lo: y_bg },
        },
        above_b_segment(p, d, y_g),
    ];
    Ok(Solution {
        regime: Regime::BuyLevelAboveRb,
        params: *p,
        derived: *d,
        w_b,
        dual: DualParams {
            y_b0: Some(y_b0),
            y_bg: Some(y_bg),
            y_0: Some(y_0),
            y_b: Some(y_b),
            y_g: Some(y_g),
            ..DualParams::default()
        },
        segments,
    })
}

/// `h = 0`: one minus the minimum probability of lifetime ruin.
pub fn solve_h_zero(p: &MarketParams, d: &DerivedConstants) -> Result<Solution> {
    if p.h != 0.0 || p.c <= 0.0 {
        return Err(mismatch("ruin limit needs h = 0 and c > 0", p));
    }
    let top = p.c / p.r;
    Ok(Solution {
        regime: Regime::RuinLimitHZero,
        params: *p,
        derived: *d,
        w_b: 0.0,
        dual: DualParams::default(),
        segments: vec![Segment {
            lo: 0.0,
            hi: top,
            branch: Branch::PowerToSafe {
                coef: 1.0,
                top,
                w_ref: 0.0,
                e: d.p0,
            },
        }],
    })
}

/// Which end of a segment to evaluate at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Lo,
    Hi,
}

/// One-sided values at a boundary between two segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PastingPoint {
    pub w: f64,
    pub left: Derivs,
    pub right: Derivs,
}

impl Solution {
    pub fn w_s(&self) -> f64 {
        self.derived.w_s
    }

    fn shape(&self) -> Shape {
        Shape::new(&self.params, &self.derived)
    }

    fn segment_index(&self, w: f64) -> usize {
        let last = self.segments.len() - 1;
        self.segments
            .iter()
            .position(|s| w < s.hi)
            .unwrap_or(last)
            .min(last)
    }

    fn check_domain(&self, w: f64) -> Result<()> {
        let ws = self.w_s();
        if !(w >= 0.0 && w <= ws * (1.0 + 1e-14)) {
            return Err(Error::Domain(format!("wealth {w} outside [0, {ws}]")));
        }
        Ok(())
    }

    /// Dual variable `t = ln z` or `t = ln u` solving the segment's wealth equation.
    fn dual_t(&self, seg: &Segment, w: f64) -> Result<f64> {
        let s = self.shape();
        match seg.branch {
            Branch::DualAlpha { z_hi, .. } => {
                // A z^{α₁−1} + B z^{α₂−1} − 1 + w r/c, increasing in z.
                let target = 1.0 - w / s.cr;
                let f = |t: f64| s.alpha_level(t) - target;
                solve_clamped(f, z_hi.ln(), 0.0, 1e-13)
            }
            Branch::DualBeta { u_lo, .. } => {
                let f = |t: f64| (w - s.beta_wealth(t)) / s.wsp;
                solve_clamped(f, 0.0, u_lo.ln(), 1e-13)
            }
            _ => Err(Error::Domain(format!("wealth {w} is not on a dual branch"))),
        }
    }

    fn branch_derivs(&self, seg: &Segment, w: f64, t: Option<f64>) -> Derivs {
        match seg.branch {
            Branch::PowerBelow { coef, w_ref, e } => {
                let x = w / w_ref;
                Derivs {
                    phi: coef * x.powf(e),
                    phi_w: coef * e * x.powf(e - 1.0) / w_ref,
                    phi_ww: coef * e * (e - 1.0) * x.powf(e - 2.0) / (w_ref * w_ref),
                }
            }
            Branch::PowerToSafe {
                coef,
                top,
                w_ref,
                e,
            } => {
                let span = top - w_ref;
                let x = (top - w) / span;
                Derivs {
                    phi: 1.0 - coef * x.powf(e),
                    phi_w: coef * e * x.powf(e - 1.0) / span,
                    phi_ww: -coef * e * (e - 1.0) * x.powf(e - 2.0) / (span * span),
                }
            }
            Branch::DualAlpha { y0, .. } => self.shape().alpha_derivs(y0, t.unwrap()),
            Branch::DualBeta { y_g, .. } => self.shape().beta_derivs(y_g, t.unwrap()),
        }
    }

    fn pi_from(&self, seg: &Segment, w: f64, t: Option<f64>) -> f64 {
        let v = self.params.merton();
        match seg.branch {
            Branch::PowerBelow { e, .. } => v * w / (1.0 - e),
            Branch::PowerToSafe { top, e, .. } => v * (top - w) / (e - 1.0),
            Branch::DualAlpha { .. } => {
                let s = self.shape();
                let t = t.unwrap();
                let e1 = ((s.a1 - 1.0) * t).exp();
                let e2 = ((s.a2 - 1.0) * t).exp();
                v * s.cr * s.ck * (s.a1 * e1 - s.a2 * e2)
            }
            Branch::DualBeta { .. } => {
                let s = self.shape();
                v * s.kappa * s.beta_curvature(t.unwrap())
            }
        }
    }

    /// Optimal death benefit: `b − w` on `[w_b, min(w_s, b)]`, zero elsewhere.
    pub fn d_star(&self, w: f64) -> f64 {
        let top = self.w_s().min(self.params.b);
        if w >= self.w_b && w <= top {
            self.params.b - w
        } else {
            0.0
        }
    }

    /// Value, derivatives and controls at wealth `w ∈ [0, w_s]`.
    pub fn eval(&self, w: f64) -> Result<StrategyEval> {
        self.check_domain(w)?;
        let ws = self.w_s();
        if w >= ws {
            return Ok(StrategyEval {
                w,
                y: None,
                phi: 1.0,
                phi_w: 0.0,
                phi_ww: 0.0,
                pi_star: 0.0,
                d_star: self.d_star(w),
            });
        }
        let seg = self.segments[self.segment_index(w)];
        let t = match seg.branch {
            Branch::DualAlpha { .. } | Branch::DualBeta { .. } => Some(self.dual_t(&seg, w)?),
            _ => None,
        };
        let dv = self.branch_derivs(&seg, w, t);
        let pi_star = self.pi_from(&seg, w, t);
        Ok(StrategyEval {
            w,
            y: t.map(|_| dv.phi_w),
            phi: dv.phi,
            phi_w: dv.phi_w,
            phi_ww: dv.phi_ww,
            pi_star,
            d_star: self.d_star(w),
        })
    }

    pub fn phi(&self, w: f64) -> Result<f64> {
        Ok(self.eval(w)?.phi)
    }

    /// Optimal investment with the convention `π* = 0` for `w ≥ w_s`.
    pub fn pi_star_or_zero(&self, w: f64) -> Result<f64> {
        if w >= self.w_s() {
            return Ok(0.0);
        }
        Ok(self.eval(w)?.pi_star)
    }

    /// Dual variable `y = φ_w(w)` on a dual branch.
    pub fn invert_dual(&self, w: f64) -> Result<f64> {
        self.check_domain(w)?;
        let seg = self.segments[self.segment_index(w)];
        let t = self.dual_t(&seg, w)?;
        Ok(match seg.branch {
            Branch::DualAlpha { y0, .. } => y0 * t.exp(),
            Branch::DualBeta { y_g, .. } => y_g * t.exp(),
            _ => unreachable!("dual_t only succeeds on dual branches"),
        })
    }

    /// Wealth corresponding to dual value `y` on the branch containing it.
    pub fn wealth_of_dual(&self, y: f64) -> Result<f64> {
        let s = self.shape();
        for seg in &self.segments {
            match seg.branch {
                Branch::DualAlpha { y0, z_hi } => {
                    let z = y / y0;
                    if z >= z_hi && z <= 1.0 {
                        return Ok(s.alpha_wealth(z.ln()));
                    }
                }
                Branch::DualBeta { y_g, u_lo } => {
                    let u = y / y_g;
                    if (1.0..=u_lo).contains(&u) {
                        return Ok(s.beta_wealth(u.ln()));
                    }
                }
                _ => {}
            }
        }
        Err(Error::Domain(format!(
            "dual value {y} lies on no dual branch"
        )))
    }

    /// Closed-form values of segment `idx` at one of its ends, using the known
    /// dual value there instead of inverting.
    pub fn segment_end(&self, idx: usize, end: End) -> Derivs {
        let seg = self.segments[idx];
        let w = match end {
            End::Lo => seg.lo,
            End::Hi => seg.hi,
        };
        let t = match (seg.branch, end) {
            (Branch::DualAlpha { .. }, End::Lo) => Some(0.0),
            (Branch::DualAlpha { z_hi, .. }, End::Hi) => Some(z_hi.ln()),
            (Branch::DualBeta { u_lo, .. }, End::Lo) => Some(u_lo.ln()),
            (Branch::DualBeta { .. }, End::Hi) => Some(0.0),
            _ => None,
        };
        self.branch_derivs(&seg, w, t)
    }

    /// Interior boundaries between segments with the values on each side.
    pub fn pasting_points(&self) -> Vec<PastingPoint> {
        (1..self.segments.len())
            .filter(|&i| self.segments[i].lo > 0.0 && self.segments[i].lo < self.w_s())
            .map(|i| PastingPoint {
                w: self.segments[i].lo,
                left: self.segment_end(i - 1, End::Hi),
                right: self.segment_end(i, End::Lo),
            })
            .collect()
    }

    /// Copy with the dual scale below the buy level multiplied by `1 + delta`,
    /// leaving the buy level and the insured branch untouched. Used to check
    /// that verification catches a wrong solution.
    pub fn perturb_yb(&self, delta: f64) -> Result<Solution> {
        let mut out = self.clone();
        let mut hit = false;
        for seg in &mut out.segments {
            if let Branch::DualAlpha { y0, .. } = &mut seg.branch {
                *y0 *= 1.0 + delta;
                hit = true;
            }
        }
        if !hit {
            return Err(Error::Domain(format!(
                "regime {} has no dual branch below a buy level",
                self.regime
            )));
        }
        if let Some(y0) = out.dual.y_0.as_mut() {
            *y0 *= 1.0 + delta;
        }
        Ok(out)
    }
}

/// Deterministic benchmark with no risky asset and `c = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterministicSolution {
    /// Insure below this wealth, wait above it.
    pub w_star: f64,
    /// `hb / (r + h)`.
    pub w_s_det: f64,
    pub r: f64,
    pub h: f64,
    pub lambda: f64,
}

impl DeterministicSolution {
    pub fn new(params: &MarketParams) -> Result<Self> {
        params.validate()?;
        let MarketParams {
            r, h, lambda, b, ..
        } = *params;
        if h <= 0.0 {
            return Err(Error::Domain("deterministic benchmark needs h > 0".into()));
        }
        let w_s_det = h * b / (r + h);
        let insured = lambda / (r + h);
        let waiting = lambda / r;
        let w_star = if r >= lambda {
            0.0
        } else if insured >= 1.0 {
            // Insuring beats waiting at every wealth below the safe level.
            w_s_det
        } else {
            let f = |x: f64| 1.0 - (1.0 - x).powf(insured) - x.powf(waiting);
            // Positive near 0, negative near 1.
            let mut hi = 0.5;
            while f(hi) >= 0.0 {
                hi = 0.5 * (1.0 + hi);
                if hi >= 1.0 {
                    return Err(Error::Domain("no interior switch wealth".into()));
                }
            }
            let mut lo = 0.5 * hi;
            while f(lo) <= 0.0 {
                lo *= 0.5;
                if lo < 1e-300 {
                    return Err(Error::Domain("no interior switch wealth".into()));
                }
            }
            let bracket = Bracket::new(lo, hi, f)?;
            w_s_det * solve_bracketed(f, bracket, &RootConfig::machine())?
        };
        Ok(Self {
            w_star,
            w_s_det,
            r,
            h,
            lambda,
        })
    }

    /// `1 − (1 − w/w_s)^{λ/(r+h)}` below `w*`, `(w/w_s)^{λ/r}` above.
    pub fn phi(&self, w: f64) -> Result<f64> {
        if !(0.0..=self.w_s_det).contains(&w) {
            return Err(Error::Domain(format!(
                "wealth {w} outside [0, {}]",
                self.w_s_det
            )));
        }
        let x = w / self.w_s_det;
        Ok(if w < self.w_star {
            1.0 - (1.0 - x).powf(self.lambda / (self.r + self.h))
        } else {
            x.powf(self.lambda / self.r)
        })
    }
}

/// φ^d at wealth `w` for the parameters' `r`, `h`, `λ`, `b`.
pub fn deterministic_phi(params: &MarketParams, w: f64) -> Result<f64> {
    DeterministicSolution::new(params)?.phi(w)
}
