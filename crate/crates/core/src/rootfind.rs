//! Bracketed scalar root finding.
//!
//! Every transcendental equation in the solver is monotone on a known
//! interval, so a bracket-preserving method is all that is needed: bisection
//! with a secant step tried first. The secant point is only accepted when it
//! falls strictly inside the current bracket, so the iteration can never
//! leave the interval it started from.

use thiserror::Error;

/// Errors produced by the root finders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("root not converged after {iterations} iterations (bracket [{lo}, {hi}])")]
    MaxIterExceeded { iterations: usize, lo: f64, hi: f64 },
    #[error("no sign change found expanding from {lo} up to {cap}")]
    BracketNotFound { lo: f64, cap: f64 },
    #[error("function returned NaN at x = {x}")]
    NotANumber { x: f64 },
}

/// An interval known to contain a root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    /// Evaluates `f` at both endpoints and checks the sign condition.
    pub fn new<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) -> Result<Self, RootError> {
        let f_lo = f(lo);
        let f_hi = f(hi);
        Self::from_values(lo, hi, f_lo, f_hi)
    }

    /// Builds a bracket from endpoint values that have already been computed.
    pub fn from_values(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Result<Self, RootError> {
        if f_lo.is_nan() {
            return Err(RootError::NotANumber { x: lo });
        }
        if f_hi.is_nan() {
            return Err(RootError::NotANumber { x: hi });
        }
        let opposite = (f_lo < 0.0 && f_hi > 0.0) || (f_lo > 0.0 && f_hi < 0.0);
        if !(lo < hi) || !(opposite || f_lo == 0.0 || f_hi == 0.0) {
            return Err(RootError::NoSignChange { lo, hi, f_lo, f_hi });
        }
        Ok(Self { lo, hi, f_lo, f_hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Convergence settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_iter: 200,
        }
    }
}

impl RootConfig {
    /// Settings that run until the bracket cannot be split any further in
    /// double precision. Used for the solver's internal parameters.
    pub fn machine() -> Self {
        Self {
            rel_tol: 2.0 * f64::EPSILON,
            abs_tol: 1e-300,
            max_iter: 400,
        }
    }
}

/// Finds a root of `f` inside `bracket`.
///
/// Converged when the bracket width is at most `abs_tol + rel_tol * |mid|`, when
/// `f` vanishes exactly, or when the bracket can no longer be split in floating
/// point. The returned point always lies in the initial bracket.
pub fn solve_bracketed<F: FnMut(f64) -> f64>(
    mut f: F,
    bracket: Bracket,
    cfg: &RootConfig,
) -> Result<f64, RootError> {
    let Bracket {
        mut lo,
        mut hi,
        mut f_lo,
        mut f_hi,
    } = bracket;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    // A secant step that fails to halve the bracket forces the next step to
    // bisect, so the width at least halves every two iterations.
    let mut force_bisect = false;
    for _ in 0..cfg.max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= cfg.abs_tol + cfg.rel_tol * mid.abs() || mid <= lo || mid >= hi {
            return Ok(pick_endpoint(lo, hi, f_lo, f_hi, mid));
        }
        let width = hi - lo;
        let mut x = mid;
        if !force_bisect && f_lo.is_finite() && f_hi.is_finite() {
            let s = hi - f_hi * width / (f_hi - f_lo);
            if s > lo && s < hi {
                x = s;
            }
        }

        let fx = f(x);
        if fx.is_nan() {
            return Err(RootError::NotANumber { x });
        }
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx < 0.0) == (f_lo < 0.0) {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
        force_bisect = x != mid && hi - lo > 0.5 * width;
    }
    Err(RootError::MaxIterExceeded {
        iterations: cfg.max_iter,
        lo,
        hi,
    })
}

fn pick_endpoint(lo: f64, hi: f64, f_lo: f64, f_hi: f64, mid: f64) -> f64 {
    if mid > lo && mid < hi {
        mid
    } else if f_lo.abs() <= f_hi.abs() {
        lo
    } else {
        hi
    }
}

/// Grows the upper endpoint geometrically from `lo` until `f` changes sign.
///
/// The returned bracket is `[last point without a sign change, first point
/// with one]`. Gives up once the upper endpoint passes `1e6 * lo`.
pub fn expand_bracket_up<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    growth: f64,
) -> Result<Bracket, RootError> {
    assert!(growth > 1.0, "growth factor must exceed 1");
    assert!(lo > 0.0, "expansion starts from a positive point");
    let cap = 1e6 * lo;
    let f0 = f(lo);
    if f0.is_nan() {
        return Err(RootError::NotANumber { x: lo });
    }
    if f0 == 0.0 {
        return Ok(Bracket {
            lo,
            hi: lo,
            f_lo: f0,
            f_hi: f0,
        });
    }
    let mut a = lo;
    let mut fa = f0;
    let mut b = lo * growth;
    while b <= cap {
        let fb = f(b);
        if fb.is_nan() {
            return Err(RootError::NotANumber { x: b });
        }
        if fb == 0.0 || (fb < 0.0) != (f0 < 0.0) {
            return Ok(Bracket {
                lo: a,
                hi: b,
                f_lo: fa,
                f_hi: fb,
            });
        }
        a = b;
        fa = fb;
        b *= growth;
    }
    Err(RootError::BracketNotFound { lo, cap })
}

/// Solves `f(y) = 0` for `y` in `(y_lo, y_hi)` with `0 < y_lo < y_hi`, iterating
/// on `t = ln y`. `f` is passed `t`, not `y`.
pub fn solve_in_log<F: FnMut(f64) -> f64>(
    mut f: F,
    y_lo: f64,
    y_hi: f64,
    cfg: &RootConfig,
) -> Result<f64, RootError> {
    let (t_lo, t_hi) = (y_lo.ln(), y_hi.ln());
    let bracket = Bracket::new(t_lo, t_hi, &mut f)?;
    solve_bracketed(f, bracket, cfg).map(f64::exp)
}

/// Searches downward from `t_hi` for a point where `f` has the opposite sign
/// to `f(t_hi)`, stepping by 1, 2, 4, ... Returns the bracket in `t`.
pub(crate) fn expand_bracket_down<F: FnMut(f64) -> f64>(
    mut f: F,
    t_hi: f64,
    f_hi: f64,
    max_span: f64,
) -> Result<Bracket, RootError> {
    let mut step = 1.0;
    let mut upper = t_hi;
    let mut f_upper = f_hi;
    while step <= max_span {
        let t = t_hi - step;
        let ft = f(t);
        if ft.is_nan() {
            return Err(RootError::NotANumber { x: t });
        }
        if ft == 0.0 || (ft < 0.0) != (f_hi < 0.0) {
            return Bracket::from_values(t, upper, ft, f_upper);
        }
        upper = t;
        f_upper = ft;
        step *= 2.0;
    }
    Err(RootError::BracketNotFound {
        lo: t_hi,
        cap: t_hi - max_span,
    })
}
