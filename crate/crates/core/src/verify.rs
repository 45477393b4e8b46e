//! Independent checks of a [`Solution`].
//!
//! Three oracles that share no code with the closed forms: the HJB residual
//! evaluated with the analytic derivatives, a finite-difference policy
//! iteration on the variational equation, and Monte Carlo simulation of the
//! controlled wealth process.

use rand::{Rng, SeedableRng};
use rand_distr::{Exp, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MarketParams;
use crate::solver::Solution;

/// HJB residual at `w` using the solution's analytic derivatives.
///
/// `λ(φ − 1{w ≥ w_b}) − (rw − c − h(b − w) 1{w_b ≤ w ≤ min(w_s, b)}) φ_w + m φ_w² / φ_ww`
pub fn hjb_residual(sol: &Solution, w: f64) -> Result<f64> {
    let ws = sol.w_s();
    if !(w > 0.0 && w < ws) {
        return Err(Error::Domain(format!(
            "residual needs 0 < w < {ws}, got {w}"
        )));
    }
    for pt in sol.pasting_points() {
        if (w - pt.w).abs() <= 1e-12 * ws.max(1.0) {
            return Err(Error::Domain(format!("w = {w} is a pasting point")));
        }
    }
    let e = sol.eval(w)?;
    Ok(residual_from(
        &sol.params,
        sol.w_b,
        ws,
        w,
        e.phi,
        e.phi_w,
        e.phi_ww,
    ))
}

fn residual_from(
    p: &MarketParams,
    w_b: f64,
    ws: f64,
    w: f64,
    phi: f64,
    phi_w: f64,
    phi_ww: f64,
) -> f64 {
    let reward = if w >= w_b { 1.0 } else { 0.0 };
    let insured = if w >= w_b && w <= ws.min(p.b) {
        1.0
    } else {
        0.0
    };
    let drift = p.r * w - p.c - p.h * (p.b - w) * insured;
    p.lambda * (phi - reward) - drift * phi_w + p.m() * phi_w * phi_w / phi_ww
}

/// Residual of an arbitrary candidate `(φ, φ_w, φ_ww)` against the buy level
/// `w_b`. Lets callers check functions that did not come from the solver.
pub fn hjb_residual_of(
    p: &MarketParams,
    w_b: f64,
    w: f64,
    phi: f64,
    phi_w: f64,
    phi_ww: f64,
) -> f64 {
    residual_from(p, w_b, p.safe_level(), w, phi, phi_w, phi_ww)
}

/// One-sided gaps at a pasting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PastingGap {
    pub w: f64,
    pub phi: f64,
    pub phi_w: f64,
    pub phi_ww: f64,
}

impl PastingGap {
    pub fn max(&self) -> f64 {
        self.phi.max(self.phi_w).max(self.phi_ww)
    }
}

/// Absolute differences of `(φ, φ_w, φ_ww)` across every interior segment boundary.
pub fn smooth_pasting_check(sol: &Solution) -> Vec<PastingGap> {
    sol.pasting_points()
        .into_iter()
        .map(|pt| PastingGap {
            w: pt.w,
            phi: (pt.left.phi - pt.right.phi).abs(),
            phi_w: (pt.left.phi_w - pt.right.phi_w).abs(),
            phi_ww: (pt.left.phi_ww - pt.right.phi_ww).abs(),
        })
        .collect()
}

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdConfig {
    /// Interior grid points.
    pub n_grid: usize,
    /// Stop when the value changes by less than this between policy updates.
    pub tol: f64,
    pub max_sweeps: usize,
    /// `false` solves the problem with no insurance market.
    pub insurance_allowed: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            n_grid: 2000,
            tol: 1e-10,
            max_sweeps: 10_000,
            insurance_allowed: true,
        }
    }
}

/// Converged grid solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdSolution {
    /// Nodes including both boundaries.
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    pub pi: Vec<f64>,
    /// Whether full insurance is bought at each node.
    pub insured: Vec<bool>,
    pub sweeps: usize,
    /// Last change in the value between policy updates.
    pub last_change: f64,
}

impl FdSolution {
    /// Linear interpolation of the grid value.
    pub fn phi_at(&self, w: f64) -> f64 {
        interp(&self.w, &self.phi, w)
    }

    /// Linear interpolation of the investment control.
    pub fn pi_at(&self, w: f64) -> f64 {
        interp(&self.w, &self.pi, w)
    }

    /// Smallest node at which insurance is bought, or the right end if none.
    pub fn buy_level(&self) -> f64 {
        let n = self.w.len();
        (1..n - 1)
            .find(|&i| self.insured[i])
            .map(|i| self.w[i])
            .unwrap_or(self.w[n - 1])
    }
}

fn interp(x: &[f64], y: &[f64], at: f64) -> f64 {
    let n = x.len();
    if at <= x[0] {
        return y[0];
    }
    if at >= x[n - 1] {
        return y[n - 1];
    }
    let dx = x[1] - x[0];
    let i = (((at - x[0]) / dx) as usize).min(n - 2);
    let t = (at - x[i]) / dx;
    y[i] + t * (y[i + 1] - y[i])
}

/// Solves `a_i x_{i−1} + d_i x_i + c_i x_{i+1} = r_i` in place (Thomas algorithm).
fn thomas(a: &[f64], d: &mut [f64], c: &[f64], r: &mut [f64]) {
    let n = d.len();
    for i in 1..n {
        let m = a[i] / d[i - 1];
        d[i] -= m * c[i - 1];
        r[i] -= m * r[i - 1];
    }
    r[n - 1] /= d[n - 1];
    for i in (0..n - 1).rev() {
        r[i] = (r[i] - c[i] * r[i + 1]) / d[i];
    }
}

/// Policy iteration for the variational HJB equation on a uniform grid.
///
/// For fixed controls the linear equation is solved exactly (tridiagonal);
/// then `π` is reset to the analytic maximizer of the discrete operator and
/// the insurance decision to the better of `D = 0` and `D = b − w`.
pub fn fd_solve(params: &MarketParams, cfg: &FdConfig) -> Result<FdSolution> {
    params.validate()?;
    if cfg.n_grid < 10 || !(cfg.tol > 0.0) || cfg.max_sweeps == 0 {
        return Err(Error::Config(
            "n_grid >= 10, tol > 0 and max_sweeps >= 1 required".into(),
        ));
    }
    if cfg.insurance_allowed && params.h <= 0.0 {
        return Err(Error::Config(
            "finite-difference solver needs h > 0 with insurance".into(),
        ));
    }
    let p = *params;
    let top = if cfg.insurance_allowed {
        p.safe_level()
    } else {
        (p.c / p.r).max(p.b)
    };
    let n = cfg.n_grid;
    let dx = top / (n + 1) as f64;
    let w: Vec<f64> = (0..n + 2).map(|i| i as f64 * dx).collect();
    let v = p.merton();
    let pi_cap = 10.0 * top / p.sigma;
    let half_s2 = 0.5 * p.sigma * p.sigma;

    // Concave starting guess.
    let mut phi: Vec<f64> = w.iter().map(|&x| 1.0 - (1.0 - x / top).powi(2)).collect();
    let mut pi = vec![0.0; n + 2];
    let mut insured = vec![false; n + 2];

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    let mut last_change = f64::INFINITY;
    for sweep in 1..=cfg.max_sweeps {
        // Control update from the current value.
        for i in 1..=n {
            let d1 = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
            let d2 = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (dx * dx);
            pi[i] = if d2 < 0.0 {
                (-v * d1 / d2).clamp(-pi_cap, pi_cap)
            } else {
                pi_cap
            };
            insured[i] =
                cfg.insurance_allowed && w[i] < p.b && p.lambda - p.h * (p.b - w[i]) * d1 >= 0.0;
        }

        // Linear system for the fixed controls.
        for k in 0..n {
            let i = k + 1;
            let wi = w[i];
            let ins = insured[i];
            let premium = if ins { p.h * (p.b - wi) } else { 0.0 };
            let drift = p.r * wi - p.c - premium + (p.mu - p.r) * pi[i];
            let diff = half_s2 * pi[i] * pi[i] / (dx * dx);
            let half = drift / (2.0 * dx);
            let (lo, up) = if diff >= half.abs() {
                (diff - half, diff + half)
            } else if drift > 0.0 {
                (diff, diff + drift / dx)
            } else {
                (diff - drift / dx, diff)
            };
            let reward = if ins || wi >= p.b { 1.0 } else { 0.0 };
            lower[k] = lo;
            upper[k] = up;
            diag[k] = -(lo + up) - p.lambda;
            rhs[k] = -p.lambda * reward;
        }
        // Boundary values 0 at the left, 1 at the right.
        rhs[n - 1] -= upper[n - 1];

        thomas(&lower, &mut diag, &upper, &mut rhs);
        last_change = (0..n)
            .map(|k| (rhs[k] - phi[k + 1]).abs())
            .fold(0.0, f64::max);
        phi[0] = 0.0;
        phi[n + 1] = 1.0;
        phi[1..=n].copy_from_slice(&rhs);
        if last_change < cfg.tol {
            return Ok(FdSolution {
                w,
                phi,
                pi,
                insured,
                sweeps: sweep,
                last_change,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: cfg.max_sweeps,
        residual: last_change,
    })
}

/// Largest `|φ_closed − φ_fd|` over the grid nodes.
pub fn fd_sup_error(sol: &Solution, fd: &FdSolution) -> Result<f64> {
    let ws = sol.w_s();
    let mut worst: f64 = 0.0;
    for (&w, &v) in fd.w.iter().zip(&fd.phi) {
        let w = w.min(ws);
        worst = worst.max((sol.phi(w)? - v).abs());
    }
    Ok(worst)
}

/// Investment control recovered from the grid value by `−V Φ_w / Φ_ww`,
/// with both derivatives from central differences, interpolated at `w`.
pub fn fd_extract_pi(fd: &FdSolution, params: &MarketParams, w: f64) -> f64 {
    let n = fd.w.len();
    let dx = fd.w[1] - fd.w[0];
    let v = params.merton();
    let pi_node = |i: usize| {
        let d1 = (fd.phi[i + 1] - fd.phi[i - 1]) / (2.0 * dx);
        let d2 = (fd.phi[i + 1] - 2.0 * fd.phi[i] + fd.phi[i - 1]) / (dx * dx);
        if d2 < 0.0 {
            -v * d1 / d2
        } else {
            0.0
        }
    };
    let i = ((w / dx) as usize).clamp(1, n - 3);
    let t = (w - fd.w[i]) / dx;
    pi_node(i) * (1.0 - t) + pi_node(i + 1) * t
}

/// Feedback controls to simulate.
pub trait Strategy: Sync {
    /// Risky investment and death benefit at wealth `w`.
    fn controls(&self, w: f64) -> (f64, f64);
    /// Wealth at or above which success is certain under this strategy.
    fn absorb_level(&self) -> f64;
}

/// The optimal strategy tabulated on a fine grid for fast lookup.
#[derive(Debug, Clone)]
pub struct TabulatedOptimal {
    ws: f64,
    w_b: f64,
    b: f64,
    dx: f64,
    pi: Vec<f64>,
}

impl TabulatedOptimal {
    pub fn new(sol: &Solution, nodes: usize) -> Result<Self> {
        let ws = sol.w_s();
        let dx = ws / (nodes - 1) as f64;
        let pi = (0..nodes)
            .map(|i| sol.pi_star_or_zero((i as f64 * dx).min(ws)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ws,
            w_b: sol.w_b,
            b: sol.params.b,
            dx,
            pi,
        })
    }
}

impl Strategy for TabulatedOptimal {
    fn controls(&self, w: f64) -> (f64, f64) {
        let x = w / self.dx;
        let i = (x as usize).min(self.pi.len() - 2);
        let t = x - i as f64;
        let pi = self.pi[i] + t * (self.pi[i + 1] - self.pi[i]);
        let d = if w >= self.w_b && w <= self.ws.min(self.b) {
            self.b - w
        } else {
            0.0
        };
        (pi, d)
    }

    fn absorb_level(&self) -> f64 {
        self.ws
    }
}

/// Never insure; invest by the ruin-minimizing rule `V (c/r − w)₊ / (p₀ − 1)`.
#[derive(Debug, Clone)]
pub struct NeverInsure {
    v: f64,
    cr: f64,
    p0: f64,
    b: f64,
}

impl NeverInsure {
    pub fn new(sol: &Solution) -> Self {
        let p = &sol.params;
        Self {
            v: p.merton(),
            cr: p.c / p.r,
            p0: sol.derived.p0,
            b: p.b,
        }
    }
}

impl Strategy for NeverInsure {
    fn controls(&self, w: f64) -> (f64, f64) {
        (self.v * (self.cr - w).max(0.0) / (self.p0 - 1.0), 0.0)
    }

    fn absorb_level(&self) -> f64 {
        self.cr.max(self.b)
    }
}

/// The same market on a clock running `k` times faster.
pub fn time_scaled(p: &MarketParams, k: f64) -> MarketParams {
    MarketParams {
        r: p.r * k,
        mu: p.mu * k,
        sigma: p.sigma * k.sqrt(),
        lambda: p.lambda * k,
        h: p.h * k,
        b: p.b,
        c: p.c * k,
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Euler step on the simulation clock.
    pub dt: f64,
    pub seed: u64,
    /// Starting wealth.
    pub w0: f64,
    /// Simulate in a clock running this many times faster: rates, premium,
    /// consumption and hazard are multiplied by it and σ by its square root,
    /// which leaves φ and the controls as functions of wealth unchanged.
    /// `None` picks `1/λ`, so deaths arrive at unit rate.
    pub time_scale: Option<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1.0 / 2500.0,
            seed: 42,
            w0: 0.5,
            time_scale: None,
        }
    }
}

/// Sample mean and binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn path_rng(seed: u64, path: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(splitmix64(seed ^ splitmix64(path)))
}

/// Euler–Maruyama estimate of the probability of reaching the bequest goal.
///
/// Each path draws its own exponential death time and its own generator
/// seeded from `(seed, path index)`, so the result does not depend on how
/// paths are spread over threads. A path is lost when wealth reaches 0,
/// including a Brownian-bridge test for crossings between grid times, and
/// won once wealth reaches the strategy's absorption level. Otherwise it
/// succeeds iff wealth plus the death benefit in force at death is at least `b`.
pub fn mc_estimate<S: Strategy>(
    params: &MarketParams,
    strategy: &S,
    cfg: &McConfig,
) -> Result<McEstimate> {
    params.validate()?;
    let k = cfg.time_scale.unwrap_or(1.0 / params.lambda);
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Config("time_scale must be positive".into()));
    }
    let params = &time_scaled(params, k);
    if cfg.n_paths == 0 || !(cfg.dt > 0.0 && cfg.dt <= 0.01) {
        return Err(Error::Config(
            "n_paths >= 1 and 0 < dt <= 0.01 required".into(),
        ));
    }
    let absorb = strategy.absorb_level();
    if !(cfg.w0 >= 0.0 && cfg.w0 <= absorb) {
        return Err(Error::Config(format!("w0 must lie in [0, {absorb}]")));
    }
    let p = *params;
    let death = Exp::new(p.lambda).map_err(|e| Error::Config(e.to_string()))?;
    let t_cap = 60.0 / p.lambda;
    let sqdt = cfg.dt.sqrt();
    let s2dt = p.sigma * p.sigma * cfg.dt;

    let run_path = |path: u64| -> bool {
        let mut rng = path_rng(cfg.seed, path);
        let tau: f64 = rng.sample(death);
        let horizon = tau.min(t_cap);
        let mut w = cfg.w0;
        if w <= 0.0 {
            return false;
        }
        if w >= absorb {
            return true;
        }
        let mut t = 0.0;
        while t < horizon {
            let step = cfg.dt.min(horizon - t);
            let (pi, d) = strategy.controls(w);
            let drift = p.r * w + (p.mu - p.r) * pi - p.c - p.h * d;
            let z: f64 = rng.sample(StandardNormal);
            let next = w
                + drift * step
                + p.sigma * pi * z * if step == cfg.dt { sqdt } else { step.sqrt() };
            if next <= 0.0 {
                return false;
            }
            let var = s2dt * pi * pi * (step / cfg.dt);
            if var > 0.0 {
                let expo = 2.0 * w * next / var;
                if expo < 40.0 && rng.gen::<f64>() < (-expo).exp() {
                    return false;
                }
            }
            w = next;
            if w >= absorb {
                return true;
            }
            t += step;
        }
        if tau > t_cap {
            return false;
        }
        let (_, d) = strategy.controls(w);
        w + d >= p.b
    };

    let wins: usize = (0..cfg.n_paths)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| run_path(i as u64) as usize)
        .sum();
    let n = cfg.n_paths as f64;
    let est = wins as f64 / n;
    let stderr = if cfg.n_paths > 1 {
        (est * (1.0 - est) / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: est,
        stderr,
        n_paths: cfg.n_paths,
    })
}

/// Thresholds used by [`run_verification`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub residual: f64,
    pub pasting: f64,
    pub fd: f64,
    pub mc_z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            pasting: 1e-8,
            fd: 1e-3,
            mc_z: 3.0,
        }
    }
}

/// Outcome of every check on one solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Max |HJB residual| over the interior test grid.
    pub residual_sup: f64,
    pub pasting_gaps: Vec<PastingGap>,
    /// Max |φ_closed − φ_fd| over the FD grid.
    pub fd_sup_error: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    /// `|mc_estimate − φ(w0)| / mc_stderr`.
    pub mc_z: f64,
    pub phi_w0: f64,
}

impl VerificationReport {
    /// Names of checks that exceed their thresholds.
    pub fn failures(&self, th: &Thresholds) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.residual_sup < th.residual) {
            out.push("residual");
        }
        if self.pasting_gaps.iter().any(|g| !(g.max() < th.pasting)) {
            out.push("pasting");
        }
        if !(self.fd_sup_error < th.fd) {
            out.push("fd");
        }
        if !(self.mc_z <= th.mc_z) {
            out.push("mc");
        }
        out
    }
}

/// Max |HJB residual| over `n` evenly spaced interior points, skipping
/// points within `1e-9 w_s` of a pasting point.
pub fn residual_sup(sol: &Solution, n: usize) -> Result<f64> {
    let ws = sol.w_s();
    let pastes: Vec<f64> = sol.pasting_points().iter().map(|p| p.w).collect();
    let mut worst: f64 = 0.0;
    for i in 1..=n {
        let w = ws * i as f64 / (n + 1) as f64;
        if pastes.iter().any(|&x| (w - x).abs() < 1e-9 * ws) {
            continue;
        }
        worst = worst.max(hjb_residual(sol, w)?.abs());
    }
    Ok(worst)
}

/// Runs the residual, pasting, finite-difference and Monte Carlo checks.
pub fn run_verification(
    sol: &Solution,
    fd_cfg: &FdConfig,
    mc_cfg: &McConfig,
) -> Result<VerificationReport> {
    let residual = residual_sup(sol, 1000)?;
    let pasting_gaps = smooth_pasting_check(sol);
    let fd = fd_solve(&sol.params, fd_cfg)?;
    let fd_err = fd_sup_error(sol, &fd)?;
    let strat = TabulatedOptimal::new(sol, 4096)?;
    let mc = mc_estimate(&sol.params, &strat, mc_cfg)?;
    let phi_w0 = sol.phi(mc_cfg.w0.min(sol.w_s()))?;
    let mc_z = if mc.stderr > 0.0 {
        (mc.estimate - phi_w0).abs() / mc.stderr
    } else if mc.estimate == phi_w0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(VerificationReport {
        residual_sup: residual,
        pasting_gaps,
        fd_sup_error: fd_err,
        mc_estimate: mc.estimate,
        mc_stderr: mc.stderr,
        mc_z,
        phi_w0,
    })
}
