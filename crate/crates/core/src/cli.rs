//! Command-line front end.
//!
//! Every command builds one [`Output`] holding the same data as a JSON object,
//! a CSV table and a text rendering; `--format` picks which one is written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::analysis::{self, Table, PROBE_WEALTHS};
use crate::error::{Error, Result};
use crate::model::MarketParams;
use crate::solver::solve;
use crate::verify::{run_verification, FdConfig, McConfig, Thresholds};

/// Version tag of every JSON document.
pub const SCHEMA_VERSION: u32 = 1;

/// Worker-count override read at startup.
pub const THREADS_ENV: &str = "BEQUEST_OPT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    C,
    H,
}

#[derive(Debug, Parser)]
#[command(
    name = "bequest-opt",
    version,
    about = "Optimal investment and term life insurance for a bequest goal"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Missing market parameters fall back to the
/// config file, then to r=0.03 μ=0.06 σ=0.2 λ=0.04 h=0.05 b=1 c=0.02.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub r: Option<f64>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// File of `key = value` lines using the flag names above.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regime, thresholds, buy and safe levels, dual parameters.
    Solve,
    /// Value and optimal controls at the given wealths.
    Eval {
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        w: Vec<f64>,
    },
    /// Rebuild the consumption and premium tables.
    Table {
        /// Also report each cell's deviation from the reference values.
        #[arg(long)]
        diff: bool,
        /// Round reported numbers to this many decimals.
        #[arg(long)]
        round: Option<u32>,
    },
    /// Residual, pasting, finite-difference and Monte Carlo checks.
    Verify {
        /// Multiply the dual scale below the buy level by `1 + x`.
        #[arg(long)]
        perturb_yb: Option<f64>,
        #[arg(long)]
        mc_paths: Option<usize>,
        #[arg(long)]
        mc_dt: Option<f64>,
        /// Starting wealth; defaults to half the safe level.
        #[arg(long)]
        mc_w0: Option<f64>,
        /// Clock speed-up for the simulation; defaults to 1/λ.
        #[arg(long)]
        time_scale: Option<f64>,
        #[arg(long)]
        fd_grid: Option<usize>,
    },
    /// Solve over a grid of consumption or premium rates.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// `lo:hi:n`, n evenly spaced points including both ends.
        #[arg(long)]
        grid: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        probes: Option<Vec<f64>>,
    },
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: MarketParams,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

/// Rendered result of a command plus its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub text: String,
    pub exit_code: i32,
    /// Extra line for stderr.
    pub message: Option<String>,
}

impl Output {
    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json)
                    .map_err(|e| Error::Config(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| Error::Config(e.to_string());
                w.write_record(&self.header).map_err(io)?;
                for r in &self.rows {
                    w.write_record(r).map_err(io)?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
                String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
            }
            Format::Text => Ok(self.text.clone()),
        }
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn fmt_round(x: f64, round: Option<u32>) -> String {
    match round {
        Some(d) if x.is_finite() => format!("{:.*}", d as usize, x),
        _ => fmt_num(x),
    }
}

fn round_to(x: f64, round: Option<u32>) -> f64 {
    match round {
        Some(d) if x.is_finite() => {
            let s = 10f64.powi(d as i32);
            (x * s).round() / s
        }
        _ => x,
    }
}

/// JSON number, or a string for non-finite values.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(fmt_num(x))
    }
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

fn opt_str(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt_num)
}

fn envelope(command: &str, params: Option<&MarketParams>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("command".into(), json!(command));
    if let Some(p) = params {
        m.insert("params".into(), params_json(p));
    }
    m
}

fn params_json(p: &MarketParams) -> Value {
    json!({
        "r": num(p.r), "mu": num(p.mu), "sigma": num(p.sigma), "lambda": num(p.lambda),
        "h": num(p.h), "b": num(p.b), "c": num(p.c),
    })
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim().trim_start_matches("--").to_string();
        const KEYS: [&str; 10] = [
            "r", "mu", "sigma", "lambda", "h", "b", "c", "seed", "format", "out",
        ];
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key {k}", i + 1)));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

fn file_value<T: std::str::FromStr>(
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v}")))
        })
        .transpose()
}

/// Merges flags over the config file over the defaults.
pub fn resolve(g: &GlobalArgs) -> Result<RunConfig> {
    let file = match &g.config {
        Some(path) => parse_config(
            &fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        )?,
        None => BTreeMap::new(),
    };
    let base = MarketParams::example();
    let pick = |flag: Option<f64>, key: &str, default: f64| -> Result<f64> {
        Ok(flag.or(file_value(&file, key)?).unwrap_or(default))
    };
    let params = MarketParams {
        r: pick(g.r, "r", base.r)?,
        mu: pick(g.mu, "mu", base.mu)?,
        sigma: pick(g.sigma, "sigma", base.sigma)?,
        lambda: pick(g.lambda, "lambda", base.lambda)?,
        h: pick(g.h, "h", base.h)?,
        b: pick(g.b, "b", base.b)?,
        c: pick(g.c, "c", base.c)?,
    };
    let format = match (g.format, file.get("format")) {
        (Some(f), _) => f,
        (None, Some(s)) => Format::from_str(s, true)
            .map_err(|_| Error::Config(format!("bad value for format: {s}")))?,
        (None, None) => Format::Text,
    };
    let out = g.out.clone().or_else(|| file.get("out").map(PathBuf::from));
    let seed = g.seed.or(file_value(&file, "seed")?).unwrap_or(42);
    Ok(RunConfig {
        params,
        format,
        out,
        seed,
    })
}

fn exit_code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParam { .. } | Error::Domain(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Output> {
    let s = solve(&cfg.params)?;
    let d = &s.derived;
    let fields: Vec<(&str, Option<f64>)> = vec![
        ("w_s", Some(s.w_s())),
        ("w_b", Some(s.w_b)),
        ("c1", Some(d.c1)),
        ("c2", d.c2),
        ("h_threshold", Some(d.h_threshold)),
        ("m", Some(d.m)),
        ("q", Some(d.q)),
        ("p", Some(d.p)),
        ("p0", Some(d.p0)),
        ("alpha1", Some(d.alpha1)),
        ("alpha2", Some(d.alpha2)),
        ("beta1", Some(d.beta1)),
        ("beta2", Some(d.beta2)),
        ("y_b0", s.dual.y_b0),
        ("y_g0", s.dual.y_g0),
        ("y_bg", s.dual.y_bg),
        ("y_0", s.dual.y_0),
        ("y_b", s.dual.y_b),
        ("y_g", s.dual.y_g),
    ];
    let mut m = envelope("solve", Some(&cfg.params));
    m.insert("regime".into(), json!(s.regime.name()));
    let mut header = vec!["regime".to_string()];
    let mut row = vec![s.regime.name().to_string()];
    let mut text = format!("regime       {}\n", s.regime);
    for (k, v) in &fields {
        m.insert((*k).into(), opt_num(*v));
        header.push((*k).into());
        row.push(opt_str(*v));
        text.push_str(&format!("{k:<12} {}\n", v.map_or("-".into(), fmt_num)));
    }
    Ok(Output {
        json: Value::Object(m),
        header,
        rows: vec![row],
        text,
        exit_code: 0,
        message: None,
    })
}

pub fn cmd_eval(cfg: &RunConfig, ws: &[f64]) -> Result<Output> {
    let s = solve(&cfg.params)?;
    let header: Vec<String> = [
        "w", "y", "phi", "phi_w", "phi_ww", "pi_star", "d_star", "error",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    let mut items = Vec::new();
    let mut text = format!(
        "regime {}  w_s {}  w_b {}\n",
        s.regime,
        fmt_num(s.w_s()),
        fmt_num(s.w_b)
    );
    let mut ok = 0;
    for &w in ws {
        match s.eval(w) {
            Ok(e) => {
                ok += 1;
                rows.push(vec![
                    fmt_num(w),
                    opt_str(e.y),
                    fmt_num(e.phi),
                    fmt_num(e.phi_w),
                    fmt_num(e.phi_ww),
                    fmt_num(e.pi_star),
                    fmt_num(e.d_star),
                    String::new(),
                ]);
                items.push(json!({
                    "w": num(w), "y": opt_num(e.y), "phi": num(e.phi), "phi_w": num(e.phi_w),
                    "phi_ww": num(e.phi_ww), "pi_star": num(e.pi_star), "d_star": num(e.d_star),
                    "error": Value::Null,
                }));
                text.push_str(&format!(
                    "w {}  phi {}  pi* {}  D* {}\n",
                    fmt_num(w),
                    fmt_num(e.phi),
                    fmt_num(e.pi_star),
                    fmt_num(e.d_star)
                ));
            }
            Err(err) => {
                let msg = err.to_string();
                let mut r = vec![fmt_num(w)];
                r.extend(std::iter::repeat_n(String::new(), 6));
                r.push(msg.clone());
                rows.push(r);
                items.push(json!({
                    "w": num(w), "y": Value::Null, "phi": Value::Null, "phi_w": Value::Null,
                    "phi_ww": Value::Null, "pi_star": Value::Null, "d_star": Value::Null,
                    "error": msg,
                }));
                text.push_str(&format!("w {}  error: {msg}\n", fmt_num(w)));
            }
        }
    }
    let mut m = envelope("eval", Some(&cfg.params));
    m.insert("regime".into(), json!(s.regime.name()));
    m.insert("w_s".into(), num(s.w_s()));
    m.insert("w_b".into(), num(s.w_b));
    m.insert("rows".into(), Value::Array(items));
    Ok(Output {
        json: Value::Object(m),
        header,
        rows,
        text,
        exit_code: if ok > 0 { 0 } else { 2 },
        message: (ok == 0).then(|| "no wealth level could be evaluated".to_string()),
    })
}

fn table_name(t: &Table) -> &'static str {
    if t.axis == "c" {
        "consumption"
    } else {
        "premium"
    }
}

pub fn cmd_table(diff: bool, round: Option<u32>) -> Result<Output> {
    let (tc, th) = analysis::reproduce_tables()?;
    let mut header: Vec<String> = ["table", "param", "source"].map(String::from).to_vec();
    if diff {
        header.extend(
            [
                "column",
                "value",
                "reference",
                "deviation",
                "within_tolerance",
            ]
            .map(String::from),
        );
    } else {
        header.extend(analysis::COLUMNS.map(String::from));
    }
    let mut rows = Vec::new();
    let mut tables_json = Vec::new();
    let mut text = String::new();
    for t in [&tc, &th] {
        let name = table_name(t);
        let source = |r: &analysis::TableRow| match r.source {
            analysis::RowSource::ClosedForm => "closed-form",
            analysis::RowSource::FdOracle => "fd-oracle",
        };
        text.push_str(&format!("{name} ({})\n{:<8}", t.axis, t.axis));
        for c in analysis::COLUMNS {
            text.push_str(&format!(" {c:>9}"));
        }
        text.push('\n');
        let mut rows_json = Vec::new();
        for r in &t.rows {
            let cells = r.cells();
            rows_json.push(json!({
                "param": num(r.param),
                "source": source(r),
                "w_b": num(round_to(r.w_b, round)),
                "w_s": num(round_to(r.w_s, round)),
                "pi": r.pi.iter().map(|&x| num(round_to(x, round))).collect::<Vec<_>>(),
            }));
            text.push_str(&format!("{:<8}", fmt_num(r.param)));
            for x in cells {
                text.push_str(&format!(" {:>9}", fmt_round(x, round)));
            }
            if r.source == analysis::RowSource::FdOracle {
                text.push_str("  fd-oracle");
            }
            text.push('\n');
            if !diff {
                let mut row = vec![name.to_string(), fmt_num(r.param), source(r).to_string()];
                row.extend(cells.iter().map(|&x| fmt_round(x, round)));
                rows.push(row);
            }
        }
        let mut tj = Map::new();
        tj.insert("name".into(), json!(name));
        tj.insert("axis".into(), json!(t.axis));
        tj.insert("rows".into(), Value::Array(rows_json));
        if diff {
            let mut cells_json = Vec::new();
            for (d, ok) in t.deviations() {
                let dev = d.computed - d.reference;
                let src = t
                    .rows
                    .iter()
                    .find(|r| {
                        r.param == d.param || (r.param.is_infinite() && d.param.is_infinite())
                    })
                    .map_or("closed-form", source);
                rows.push(vec![
                    name.to_string(),
                    fmt_num(d.param),
                    src.to_string(),
                    d.column.clone(),
                    fmt_num(d.computed),
                    fmt_num(d.reference),
                    fmt_num(dev),
                    ok.to_string(),
                ]);
                cells_json.push(json!({
                    "param": num(d.param), "column": d.column, "value": num(d.computed),
                    "reference": num(d.reference), "deviation": num(dev),
                    "tolerance": num(d.tolerance), "within_tolerance": ok,
                }));
            }
            let bad = t.mismatches();
            tj.insert("max_deviation".into(), num(t.max_deviation()));
            tj.insert("mismatches".into(), json!(bad.len()));
            tj.insert("cells".into(), Value::Array(cells_json));
            text.push_str(&format!(
                "max deviation {}; {} cell(s) outside tolerance\n",
                fmt_num(t.max_deviation()),
                bad.len()
            ));
            for d in bad {
                text.push_str(&format!(
                    "  {}={} {}: {} vs {} (tol {})\n",
                    t.axis,
                    fmt_num(d.param),
                    d.column,
                    fmt_num(d.computed),
                    fmt_num(d.reference),
                    fmt_num(d.tolerance)
                ));
            }
        }
        text.push('\n');
        tables_json.push(Value::Object(tj));
    }
    let mut m = envelope("table", Some(&analysis::table_params()));
    m.insert("tables".into(), Value::Array(tables_json));
    Ok(Output {
        json: Value::Object(m),
        header,
        rows,
        text,
        exit_code: 0,
        message: None,
    })
}

/// Overrides for [`cmd_verify`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    pub perturb_yb: Option<f64>,
    pub mc_paths: Option<usize>,
    pub mc_dt: Option<f64>,
    pub mc_w0: Option<f64>,
    pub time_scale: Option<f64>,
    pub fd_grid: Option<usize>,
}

pub fn cmd_verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Output> {
    let mut s = solve(&cfg.params)?;
    if let Some(delta) = opts.perturb_yb {
        s = s.perturb_yb(delta)?;
    }
    let fd_cfg = FdConfig {
        n_grid: opts.fd_grid.unwrap_or(FdConfig::default().n_grid),
        ..FdConfig::default()
    };
    let dflt = McConfig::default();
    let mc_cfg = McConfig {
        n_paths: opts.mc_paths.unwrap_or(dflt.n_paths),
        dt: opts.mc_dt.unwrap_or(dflt.dt),
        seed: cfg.seed,
        w0: opts.mc_w0.unwrap_or(0.5 * s.w_s()),
        time_scale: opts.time_scale,
    };
    let rep = run_verification(&s, &fd_cfg, &mc_cfg)?;
    let th = Thresholds::default();
    let failures = rep.failures(&th);
    let pasting = rep.pasting_gaps.iter().map(|g| g.max()).fold(0.0, f64::max);
    let checks = [
        ("residual", rep.residual_sup, th.residual),
        ("pasting", pasting, th.pasting),
        ("fd", rep.fd_sup_error, th.fd),
        ("mc", rep.mc_z, th.mc_z),
    ];
    let mut m = envelope("verify", Some(&cfg.params));
    m.insert("regime".into(), json!(s.regime.name()));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("w0".into(), num(mc_cfg.w0));
    m.insert("phi_w0".into(), num(rep.phi_w0));
    m.insert("mc_estimate".into(), num(rep.mc_estimate));
    m.insert("mc_stderr".into(), num(rep.mc_stderr));
    let mut checks_json = Vec::new();
    let mut rows = Vec::new();
    let mut text = format!("regime {}  w0 {}\n", s.regime, fmt_num(mc_cfg.w0));
    for (name, value, limit) in checks {
        let pass = !failures.contains(&name);
        checks_json.push(
            json!({"check": name, "value": num(value), "threshold": num(limit), "pass": pass}),
        );
        rows.push(vec![
            name.to_string(),
            fmt_num(value),
            fmt_num(limit),
            pass.to_string(),
        ]);
        text.push_str(&format!(
            "{name:<9} {:<10.3e} limit {:<8.0e} {}\n",
            value,
            limit,
            if pass { "pass" } else { "FAIL" }
        ));
    }
    text.push_str(&format!(
        "mc estimate {:.5} ± {:.5} vs phi(w0) {:.5}\n",
        rep.mc_estimate, rep.mc_stderr, rep.phi_w0
    ));
    m.insert("checks".into(), Value::Array(checks_json));
    m.insert("pass".into(), json!(failures.is_empty()));
    Ok(Output {
        json: Value::Object(m),
        header: ["check", "value", "threshold", "pass"]
            .map(String::from)
            .to_vec(),
        rows,
        text,
        exit_code: if failures.is_empty() { 0 } else { 1 },
        message: (!failures.is_empty())
            .then(|| format!("verification failed: {}", failures.join(", "))),
    })
}

/// Parses `lo:hi:n` into `n` evenly spaced points.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("grid must be lo:hi:n with n >= 1, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

pub fn cmd_sweep(cfg: &RunConfig, axis: Axis, grid: &str, probes: &[f64]) -> Result<Output> {
    cfg.params.validate()?;
    let grid = parse_grid(grid)?;
    if probes.is_empty() {
        return Err(Error::Config("at least one probe wealth required".into()));
    }
    let res = match axis {
        Axis::C => analysis::sweep_consumption(&cfg.params, &grid, probes),
        Axis::H => analysis::sweep_premium(&cfg.params, &grid, probes),
    };
    let mut header = vec![
        res.axis.clone(),
        "regime".into(),
        "w_b".into(),
        "w_s".into(),
    ];
    header.extend(probes.iter().map(|w| format!("phi({})", fmt_num(*w))));
    header.extend(probes.iter().map(|w| format!("pi({})", fmt_num(*w))));
    header.push("error".into());
    let mut text = header.join("  ");
    text.push('\n');
    let mut rows = Vec::new();
    let mut rows_json = Vec::new();
    for r in &res.rows {
        let regime = r.regime.map_or("", |g| g.name());
        let mut row = vec![
            fmt_num(r.value),
            regime.to_string(),
            fmt_num(r.w_b),
            fmt_num(r.w_s),
        ];
        row.extend(r.phi.iter().chain(&r.pi).map(|&x| fmt_num(x)));
        row.push(r.error.clone().unwrap_or_default());
        text.push_str(&row.join("  "));
        text.push('\n');
        rows.push(row);
        rows_json.push(json!({
            "value": num(r.value),
            "regime": r.regime.map(|g| g.name()),
            "w_b": num(r.w_b),
            "w_s": num(r.w_s),
            "phi": r.phi.iter().map(|&x| num(x)).collect::<Vec<_>>(),
            "pi": r.pi.iter().map(|&x| num(x)).collect::<Vec<_>>(),
            "error": r.error,
        }));
    }
    let mut m = envelope("sweep", Some(&cfg.params));
    m.insert("axis".into(), json!(res.axis));
    m.insert("probes".into(), probes.iter().map(|&x| num(x)).collect());
    m.insert("rows".into(), Value::Array(rows_json));
    Ok(Output {
        json: Value::Object(m),
        header,
        rows,
        text,
        exit_code: 0,
        message: None,
    })
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(RunConfig, Output)> {
    configure_threads()?;
    let cfg = resolve(&cli.global)?;
    let out = match &cli.command {
        Command::Solve => cmd_solve(&cfg)?,
        Command::Eval { w } => cmd_eval(&cfg, w)?,
        Command::Table { diff, round } => cmd_table(*diff, *round)?,
        Command::Verify {
            perturb_yb,
            mc_paths,
            mc_dt,
            mc_w0,
            time_scale,
            fd_grid,
        } => cmd_verify(
            &cfg,
            &VerifyOptions {
                perturb_yb: *perturb_yb,
                mc_paths: *mc_paths,
                mc_dt: *mc_dt,
                mc_w0: *mc_w0,
                time_scale: *time_scale,
                fd_grid: *fd_grid,
            },
        )?,
        Command::Sweep { axis, grid, probes } => cmd_sweep(
            &cfg,
            *axis,
            grid,
            probes.as_deref().unwrap_or(&PROBE_WEALTHS),
        )?,
    };
    Ok((cfg, out))
}

fn write_output(path: Option<&Path>, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => stdout
            .write_all(body.as_bytes())
            .map_err(|e| Error::Config(e.to_string())),
    }
}

/// Runs the program and returns its exit code: 0 success, 1 verification
/// failure or numerical error, 2 usage or validation error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(&cli).and_then(|(cfg, out)| {
        let body = out.render(cfg.format)?;
        write_output(cfg.out.as_deref(), &body, stdout)?;
        Ok(out)
    }) {
        Ok(out) => {
            if let Some(msg) = &out.message {
                let _ = writeln!(stderr, "{msg}");
            }
            out.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code_of(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["bequest-opt"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.2:0.2:1").unwrap(), vec![0.2]);
        let g = parse_grid("0:0.0629:20").unwrap();
        assert_eq!((g.len(), g[19]), (20, 0.0629));
        for bad in ["", "0:1", "0:1:0", "1:0:3", "a:1:2", "0:1:2:3", "0:inf:2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_parsing_and_precedence() {
        let m = parse_config("# comment\nr = 0.04\n--c=0.01  # trailing\n\n").unwrap();
        assert_eq!(m["r"], "0.04");
        assert_eq!(m["c"], "0.01");
        assert!(parse_config("bogus = 1").is_err());
        assert!(parse_config("r 0.04").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cfg");
        fs::write(&path, "c = 0\nh = 0.07\nseed = 9\nformat = json\n").unwrap();
        let g = GlobalArgs {
            r: None,
            mu: None,
            sigma: None,
            lambda: None,
            h: Some(0.05),
            b: None,
            c: None,
            format: None,
            out: None,
            seed: None,
            config: Some(path),
        };
        let cfg = resolve(&g).unwrap();
        assert_eq!(cfg.params, MarketParams::example().with_c(0.0));
        assert_eq!((cfg.seed, cfg.format), (9, Format::Json));
    }

    #[test]
    fn solve_text_and_validation() {
        let (code, out, _) = run_str(&["solve", "--c", "0.02"]);
        assert_eq!(code, 0);
        assert!(out.contains("BuyLevelBelowBequestCLow"));
        let (code, _, err) = run_str(&["solve", "--sigma", "0"]);
        assert_eq!(code, 2);
        assert!(err.contains("sigma"));
        let (code, _, _) = run_str(&["frobnicate"]);
        assert_eq!(code, 2);
        let (code, out, _) = run_str(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("sweep"));
    }

    #[test]
    fn eval_rows_and_domain_errors() {
        let (code, out, _) = run_str(&["eval", "--w", "0.3,5", "--format", "csv"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("5,") && lines[2].contains("outside"));
        let (code, _, _) = run_str(&["eval", "--w", "5"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn sweep_json_round_trips() {
        let (code, out, _) = run_str(&[
            "sweep", "--axis", "h", "--grid", "0:0.5:4", "--format", "json",
        ]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
        assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", out);
        let (code, _, _) = run_str(&["sweep", "--axis", "c", "--grid", "0:1:0"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn verify_perturbed_fails_pasting() {
        let (code, out, err) = run_str(&[
            "verify",
            "--perturb-yb",
            "1e-3",
            "--mc-paths",
            "2000",
            "--fd-grid",
            "500",
            "--format",
            "json",
        ]);
        assert_eq!(code, 1, "{err}");
        assert!(err.contains("pasting"));
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["checks"][1]["pass"], false);
    }
}
