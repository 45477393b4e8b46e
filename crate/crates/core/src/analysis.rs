//! Parameter sweeps, limit checks and the two reference tables.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MarketParams, Regime};
use crate::solver::solve;
use crate::verify::{fd_extract_pi, fd_solve, FdConfig};

/// Wealth levels at which the tables report π*.
pub const PROBE_WEALTHS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Value of the swept parameter.
    pub value: f64,
    pub regime: Option<Regime>,
    pub w_b: f64,
    pub w_s: f64,
    /// φ at each probe wealth (1 at or above the safe level).
    pub phi: Vec<f64>,
    /// π* at each probe wealth (0 at or above the safe level).
    pub pi: Vec<f64>,
    /// Set when the solve failed; numeric fields are NaN then.
    pub error: Option<String>,
}

/// Rows of a one-parameter sweep, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// `"c"` or `"h"`.
    pub axis: String,
    pub probes: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn w_b(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.w_b).collect()
    }
}

fn probe_row(p: &MarketParams, value: f64, probes: &[f64]) -> SweepRow {
    let attempt = || -> Result<SweepRow> {
        let s = solve(p)?;
        let ws = s.w_s();
        let mut phi = Vec::with_capacity(probes.len());
        let mut pi = Vec::with_capacity(probes.len());
        for &w in probes {
            if w >= ws {
                phi.push(1.0);
                pi.push(0.0);
            } else {
                let e = s.eval(w)?;
                phi.push(e.phi);
                pi.push(e.pi_star);
            }
        }
        Ok(SweepRow {
            value,
            regime: Some(s.regime),
            w_b: s.w_b,
            w_s: ws,
            phi,
            pi,
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| SweepRow {
        value,
        regime: None,
        w_b: f64::NAN,
        w_s: f64::NAN,
        phi: vec![f64::NAN; probes.len()],
        pi: vec![f64::NAN; probes.len()],
        error: Some(e.to_string()),
    })
}

fn sweep(
    axis: &str,
    grid: &[f64],
    probes: &[f64],
    make: impl Fn(f64) -> MarketParams + Sync,
) -> SweepResult {
    let rows = grid
        .par_iter()
        .map(|&v| probe_row(&make(v), v, probes))
        .collect();
    SweepResult {
        axis: axis.to_string(),
        probes: probes.to_vec(),
        rows,
    }
}

/// Solves at each consumption rate in `c_grid`.
pub fn sweep_consumption(base: &MarketParams, c_grid: &[f64], probes: &[f64]) -> SweepResult {
    sweep("c", c_grid, probes, |c| base.with_c(c))
}

/// Solves at each premium rate in `h_grid`.
pub fn sweep_premium(base: &MarketParams, h_grid: &[f64], probes: &[f64]) -> SweepResult {
    sweep("h", h_grid, probes, |h| base.with_h(h))
}

/// Value and investment as `h → 0+`: `1 − (1 − rw/c)^{p₀}` and
/// `V (c/r − w)/(p₀ − 1)`.
pub fn limit_h_zero(params: &MarketParams, w: f64) -> Result<(f64, f64)> {
    params.validate()?;
    if params.c <= 0.0 {
        return Err(Error::Domain("h -> 0 limit needs c > 0".into()));
    }
    let cr = params.c / params.r;
    if !(0.0..=cr).contains(&w) {
        return Err(Error::Domain(format!("wealth {w} outside [0, {cr}]")));
    }
    let p0 = crate::model::derive_constants(&params.with_h(0.0))?.p0;
    let phi = 1.0 - (1.0 - w / cr).powf(p0);
    let pi = params.merton() * (cr - w) / (p0 - 1.0);
    Ok((phi, pi))
}

/// Minimum-ruin investment `V (c/r − w)₊ / (p₀ − 1)`.
pub fn pi_min(params: &MarketParams, p0: f64, w: f64) -> f64 {
    params.merton() * (params.c / params.r - w).max(0.0) / (p0 - 1.0)
}

/// Comparison of large-premium solutions with the no-insurance FD solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HInfinityReport {
    pub h: Vec<f64>,
    /// Max |φ_h − φ_fd| over the probe wealths, per `h`.
    pub deviation: Vec<f64>,
    pub w_b: Vec<f64>,
}

/// Solves at `h ∈ {10, 100, 1000}` and compares φ with the FD solution of the
/// problem without insurance at the probe wealths.
pub fn check_h_infinity(params: &MarketParams, probes: &[f64]) -> Result<HInfinityReport> {
    if params.c <= 0.0 {
        return Err(Error::Domain("h -> infinity check needs c > 0".into()));
    }
    let fd = fd_solve(
        params,
        &FdConfig {
            insurance_allowed: false,
            ..FdConfig::default()
        },
    )?;
    let hs = vec![10.0, 100.0, 1000.0];
    let mut deviation = Vec::new();
    let mut w_b = Vec::new();
    for &h in &hs {
        let s = solve(&params.with_h(h))?;
        let mut worst: f64 = 0.0;
        for &w in probes {
            let closed = if w >= s.w_s() { 1.0 } else { s.phi(w)? };
            worst = worst.max((closed - fd.phi_at(w)).abs());
        }
        deviation.push(worst);
        w_b.push(s.w_b);
    }
    Ok(HInfinityReport {
        h: hs,
        deviation,
        w_b,
    })
}

/// Max relative deviation between `(φ(kw), w_b, π*(kw)/k)` at `(kb, kc)` and
/// `(φ(w), w_b, π*(w))` at `(b, c)`.
pub fn scaling_check(params: &MarketParams, k: f64, probes: &[f64]) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain("scale factor must be positive".into()));
    }
    let base = solve(params)?;
    let scaled = solve(&MarketParams {
        b: k * params.b,
        c: k * params.c,
        ..*params
    })?;
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    };
    let mut worst = rel(scaled.w_b, k * base.w_b);
    for &w in probes {
        if w >= base.w_s() {
            continue;
        }
        let e0 = base.eval(w)?;
        let e1 = scaled.eval((k * w).min(scaled.w_s()))?;
        worst = worst.max(rel(e1.phi, e0.phi));
        worst = worst.max(rel(e1.pi_star / k, e0.pi_star));
    }
    Ok(worst)
}

/// A printed table row: `(parameter, w_b, w_s, π* at the probe wealths)`.
pub type GoldenRow = (f64, f64, f64, [f64; 5]);

/// Reference values for the consumption table (`h = 0.05`).
#[allow(clippy::approx_constant)]
pub const GOLDEN_CONSUMPTION: [GoldenRow; 10] = [
    (0.0, 0.375, 0.625, [0.212, 0.637, 0.397, 0.0, 0.0]),
    (0.0005, 0.381, 0.631, [0.207, 0.622, 0.417, 0.0, 0.0]),
    (0.005, 0.403, 0.688, [0.428, 0.724, 0.560, 0.0, 0.0]),
    (0.01, 0.397, 0.750, [0.748, 0.983, 0.794, 0.159, 0.0]),
    (0.02, 0.354, 0.875, [1.407, 1.597, 1.191, 0.556, 0.0]),
    (0.03, 0.295, 1.000, [2.072, 2.223, 1.588, 0.953, 0.318]),
    (0.04, 0.215, 1.333, [2.693, 2.575, 1.932, 1.284, 0.615]),
    (0.05, 0.124, 1.667, [3.359, 2.893, 2.239, 1.573, 0.874]),
    (0.06, 0.028, 2.000, [3.851, 3.194, 2.528, 1.846, 1.122]),
    (0.0629, 0.0, 2.097, [3.937, 3.278, 2.609, 1.923, 1.193]),
];

/// Reference values for the premium table (`c = 0.02`), finite `h` only.
pub const GOLDEN_PREMIUM: [GoldenRow; 9] = [
    (0.0, 0.0, 0.667, [0.400, 0.259, 0.118, 0.0, 0.0]),
    (0.01, 0.0, 0.750, [0.707, 0.490, 0.272, 0.0544, 0.0]),
    (0.02, 0.0, 0.800, [1.078, 0.770, 0.462, 0.154, 0.0]),
    (0.03, 0.133, 0.833, [1.407, 1.092, 0.683, 0.273, 0.0]),
    (0.04, 0.259, 0.857, [1.407, 1.447, 0.927, 0.408, 0.0]),
    (0.05, 0.357, 0.875, [1.407, 1.600, 1.191, 0.556, 0.0]),
    (0.10, 0.609, 0.923, [1.407, 1.600, 1.833, 1.402, 0.145]),
    (0.20, 0.782, 0.957, [1.407, 1.600, 1.833, 2.106, 0.724]),
    (0.50, 0.907, 0.981, [1.407, 1.600, 1.833, 2.106, 2.406]),
];

/// Reference row for `h = ∞`: `w_b = b`, `w_s = 1`.
pub const GOLDEN_NO_INSURANCE: GoldenRow =
    (f64::INFINITY, 1.0, 1.0, [1.407, 1.600, 1.833, 2.106, 2.406]);

/// Where a table row's numbers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowSource {
    ClosedForm,
    FdOracle,
}

/// One computed table row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub param: f64,
    pub w_b: f64,
    pub w_s: f64,
    pub pi: [f64; 5],
    pub source: RowSource,
}

impl TableRow {
    /// `[w_b, w_s, π*(0.1), …, π*(0.9)]`.
    pub fn cells(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        out[0] = self.w_b;
        out[1] = self.w_s;
        out[2..].copy_from_slice(&self.pi);
        out
    }
}

/// A computed table next to its reference values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    /// `"c"` or `"h"`.
    pub axis: String,
    pub rows: Vec<TableRow>,
    pub golden: Vec<GoldenRow>,
}

/// One cell that differs from the reference by more than the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDiff {
    pub param: f64,
    /// Column name: `w_b`, `w_s` or `pi(0.1)` …
    pub column: String,
    pub computed: f64,
    pub reference: f64,
    pub tolerance: f64,
}

pub const COLUMNS: [&str; 7] = [
    "w_b", "w_s", "pi(0.1)", "pi(0.3)", "pi(0.5)", "pi(0.7)", "pi(0.9)",
];

fn golden_cells(g: &GoldenRow) -> [f64; 7] {
    let mut out = [0.0; 7];
    out[0] = g.1;
    out[1] = g.2;
    out[2..].copy_from_slice(&g.3);
    out
}

impl Table {
    /// Every cell with its deviation from the reference.
    pub fn deviations(&self) -> Vec<(CellDiff, bool)> {
        let mut out = Vec::new();
        for (row, g) in self.rows.iter().zip(&self.golden) {
            let tol = match row.source {
                RowSource::ClosedForm => 0.0005,
                RowSource::FdOracle => 0.02,
            };
            for (j, (a, b)) in row.cells().iter().zip(golden_cells(g)).enumerate() {
                let ok = (a - b).abs() <= tol + 1e-12;
                out.push((
                    CellDiff {
                        param: row.param,
                        column: COLUMNS[j].to_string(),
                        computed: *a,
                        reference: b,
                        tolerance: tol,
                    },
                    ok,
                ));
            }
        }
        out
    }

    /// Cells outside tolerance.
    pub fn mismatches(&self) -> Vec<CellDiff> {
        self.deviations()
            .into_iter()
            .filter(|(_, ok)| !ok)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations()
            .iter()
            .map(|(d, _)| (d.computed - d.reference).abs())
            .fold(0.0, f64::max)
    }
}

fn closed_row(p: &MarketParams, param: f64) -> Result<TableRow> {
    let s = solve(p)?;
    let mut pi = [0.0; 5];
    for (slot, &w) in pi.iter_mut().zip(&PROBE_WEALTHS) {
        *slot = s.pi_star_or_zero(w)?;
    }
    Ok(TableRow {
        param,
        w_b: s.w_b,
        w_s: s.w_s(),
        pi,
        source: RowSource::ClosedForm,
    })
}

/// Base parameters of both tables.
pub fn table_params() -> MarketParams {
    MarketParams::example()
}

/// The consumption table at `h = 0.05`.
pub fn consumption_table() -> Result<Table> {
    let base = table_params();
    let rows = GOLDEN_CONSUMPTION
        .iter()
        .map(|g| closed_row(&base.with_c(g.0), g.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        axis: "c".into(),
        rows,
        golden: GOLDEN_CONSUMPTION.to_vec(),
    })
}

/// The premium table at `c = 0.02`, with the `h = ∞` row from the FD solver
/// of the no-insurance problem.
pub fn premium_table(fd_cfg: &FdConfig) -> Result<Table> {
    let base = table_params();
    let mut rows = GOLDEN_PREMIUM
        .iter()
        .map(|g| closed_row(&base.with_h(g.0), g.0))
        .collect::<Result<Vec<_>>>()?;
    let cfg = FdConfig {
        insurance_allowed: false,
        ..*fd_cfg
    };
    let fd = fd_solve(&base, &cfg)?;
    let top = *fd.w.last().unwrap();
    let mut pi = [0.0; 5];
    for (slot, &w) in pi.iter_mut().zip(&PROBE_WEALTHS) {
        *slot = if w >= top {
            0.0
        } else {
            fd_extract_pi(&fd, &base, w)
        };
    }
    rows.push(TableRow {
        param: f64::INFINITY,
        w_b: fd.buy_level(),
        w_s: top,
        pi,
        source: RowSource::FdOracle,
    });
    let mut golden = GOLDEN_PREMIUM.to_vec();
    golden.push(GOLDEN_NO_INSURANCE);
    Ok(Table {
        axis: "h".into(),
        rows,
        golden,
    })
}

/// Both tables.
pub fn reproduce_tables() -> Result<(Table, Table)> {
    Ok((consumption_table()?, premium_table(&FdConfig::default())?))
}

/// True when the sequence rises (weakly) to its maximum and then falls (weakly).
pub fn is_unimodal(xs: &[f64]) -> bool {
    let Some(peak) = xs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    else {
        return true;
    };
    xs[..=peak].windows(2).all(|w| w[0] <= w[1]) && xs[peak..].windows(2).all(|w| w[0] >= w[1])
}
