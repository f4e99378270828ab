//! Canned experiments with pinned configs and pass/fail tolerances.

use serde::Serialize;
use serde_json::{json, Value};

use meanfield::fokkerplanck::fp_solve;
use meanfield::invariant::{gamma, stationary_measure_atomic, steady_states};
use meanfield::spectral::{decay_window, fit_decay_rate, lambda_star_auto};
use meanfield::volterra::{picard_closure, solve_rate, RateSolution};
use meanfield::{Current, GridMeasure};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const NAMES: [&str; 4] = ["bistability", "oscillation", "smallJ", "rate-lambda"];

/// Pinned configuration of a named experiment.
pub fn pinned(name: &str) -> CliResult<ExperimentConfig> {
    let text = match name {
        "bistability" => include_str!("../../../configs/repro/bistability.toml"),
        "oscillation" => include_str!("../../../configs/repro/oscillation.toml"),
        "smallJ" => include_str!("../../../configs/repro/smallJ.toml"),
        "rate-lambda" => include_str!("../../../configs/repro/rate-lambda.toml"),
        _ => return Err(CliError::Usage(format!("unknown experiment `{name}`; expected one of {NAMES:?}"))),
    };
    ExperimentConfig::from_toml(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// `<=` or `>=`.
    pub relation: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Check { name: name.into(), measured, relation: "<=", limit, passed: measured <= limit }
    }

    fn at_least(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Check { name: name.into(), measured, relation: ">=", limit, passed: measured >= limit }
    }

    fn equals(name: impl Into<String>, measured: usize, expected: usize) -> Self {
        let m = measured as f64;
        Check { name: name.into(), measured: m, relation: "==", limit: expected as f64, passed: measured == expected }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl ReproReport {
    fn new(name: &str, checks: Vec<Check>, details: Value) -> Self {
        ReproReport { name: name.into(), passed: checks.iter().all(|c| c.passed), checks, details }
    }

    /// `name=measured relation limit` for every failed check.
    pub fn failures(&self) -> String {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}={} (needs {} {})", c.name, c.measured, c.relation, c.limit))
            .collect();
        failed.join("; ")
    }
}

/// A report and the rate series behind it.
pub struct ReproRun {
    pub report: ReproReport,
    pub series: Vec<(String, RateSolution)>,
}

pub fn run(name: &str, cfg: &ExperimentConfig) -> CliResult<ReproRun> {
    match name {
        "bistability" => bistability(cfg),
        "oscillation" => oscillation(cfg),
        "smallJ" => small_j(cfg),
        "rate-lambda" => rate_lambda(cfg),
        _ => Err(CliError::Usage(format!("unknown experiment `{name}`; expected one of {NAMES:?}"))),
    }
}

/// Sup-distance from the stationary rate allowed for every steady state.
pub const STATIONARITY_TOL: f64 = 1e-3;

/// Three steady states, each of which is stationary for the linear dynamics.
pub fn bistability(cfg: &ExperimentConfig) -> CliResult<ReproRun> {
    let m = cfg.model()?;
    let rep = steady_states(&m, cfg.steady.a_max, cfg.steady.n_scan)?;
    let mut checks = vec![Check::equals("roots", rep.roots.len(), 3)];
    let (grid, tg) = (cfg.spatial_grid()?, cfg.time_grid()?);
    let mut series = Vec::new();
    for (k, root) in rep.roots.iter().enumerate() {
        let nu = stationary_measure_atomic(&m, root.a, grid)?;
        let r = solve_rate(&m, &Current::constant(root.a), &nu, tg)?;
        let sup = r.values.iter().map(|v| (v - root.gamma).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most(format!("stationarity_{k}"), sup, STATIONARITY_TOL));
        series.push((format!("rate_root{k}.csv"), r));
    }
    let details = json!({ "mu": cfg.drift.mu, "J": rep.j, "roots": rep.roots, "j_m": rep.j_m });
    Ok(ReproRun { report: ReproReport::new("bistability", checks, details), series })
}

pub const SUSTAIN_RATIO: f64 = 0.5;
pub const AMPLITUDE_TOL: f64 = 0.1;

/// Sustained oscillation of the nonlinear rate, reproduced by the Fokker-Planck solver.
pub fn oscillation(cfg: &ExperimentConfig) -> CliResult<ReproRun> {
    let m = cfg.model()?;
    let init = cfg.initial_law(&m)?;
    let t = cfg.grid.t_end;
    let (mid, late) = ((0.5 * t, 0.75 * t), (0.75 * t, t));
    let pic = picard_closure(&m, &init, cfg.time_grid()?, cfg.picard_options())?.rate;
    let (a_mid, a_late) = (pic.amplitude(mid.0, mid.1), pic.amplitude(late.0, late.1));
    let fp = fp_solve(&m, &init, t, cfg.grid.dx, cfg.fp.dt)?.rate;
    let a_fp = fp.amplitude(late.0, late.1);
    let ratio = if a_mid > 0.0 { a_late / a_mid } else { 0.0 };
    let rel = (a_fp - a_late).abs() / a_late.max(f64::MIN_POSITIVE);
    let checks = vec![Check::at_least("sustained_ratio", ratio, SUSTAIN_RATIO), Check::at_most("fp_amplitude_rel", rel, AMPLITUDE_TOL)];
    let details = json!({
        "amplitude_mid": a_mid,
        "amplitude_late": a_late,
        "amplitude_fp_late": a_fp,
        "windows": [mid, late],
    });
    let fp_out = cfg.time_grid().ok().and_then(|g| fp.restrict(g).ok()).unwrap_or(fp);
    Ok(ReproRun {
        report: ReproReport::new("oscillation", checks, details),
        series: vec![("rate_picard.csv".into(), pic), ("rate_fp.csv".into(), fp_out)],
    })
}

pub const SMALL_J_TOL: f64 = 1e-3;

/// Two initial laws whose nonlinear rates settle on the same stationary rate.
pub fn small_j(cfg: &ExperimentConfig) -> CliResult<ReproRun> {
    let m = cfg.model()?;
    let rep = steady_states(&m, cfg.steady.a_max, cfg.steady.n_scan)?;
    let mut checks = vec![Check::equals("roots", rep.roots.len(), 1)];
    let target = rep.roots[0].gamma;
    let grid = cfg.spatial_grid()?;
    let tg = cfg.time_grid()?;
    let inits = [
        ("dirac", GridMeasure::dirac(0.0, grid)?),
        ("uniform", GridMeasure::uniform(cfg.init.lo, cfg.init.hi, grid)?),
    ];
    let mut series = Vec::new();
    let mut ends = Vec::new();
    for (label, nu) in inits {
        let r = picard_closure(&m, &nu, tg, cfg.picard_options())?.rate;
        let end = *r.values.last().expect("non-empty grid");
        checks.push(Check::at_most(format!("gap_{label}"), (end - target).abs(), SMALL_J_TOL));
        ends.push(end);
        series.push((format!("rate_{label}.csv"), r));
    }
    let details = json!({ "a_star": rep.roots[0].a, "gamma": target, "r_end": ends });
    Ok(ReproRun { report: ReproReport::new("smallJ", checks, details), series })
}

pub const LAMBDA_TOL: f64 = 0.15;
/// Error band `[lo, hi]` of `|r - gamma|` used for the decay fit.
pub const FIT_BAND: (f64, f64) = (1e-8, 1e-2);

/// Decay rate of the linear rate against the spectral prediction.
pub fn rate_lambda(cfg: &ExperimentConfig) -> CliResult<ReproRun> {
    let m = cfg.model()?;
    let a = cfg.current.a;
    let g = gamma(&m, a)?;
    let r = solve_rate(&m, &Current::constant(a), &cfg.initial_law(&m)?, cfg.time_grid()?)?;
    let window = decay_window(&r, g, FIT_BAND.0, FIT_BAND.1)
        .ok_or_else(|| CliError::Tolerance(format!("|r - gamma| never enters [{}, {}]", FIT_BAND.0, FIT_BAND.1)))?;
    let fit = fit_decay_rate(&r, g, window)?;
    let spec = lambda_star_auto(&m, a, &cfg.spectral.floors)?;
    let rel = (fit.lambda_hat - spec.lambda_star).abs() / spec.lambda_star;
    let checks = vec![Check::at_most("lambda_rel", rel, LAMBDA_TOL)];
    let details = json!({
        "a": a,
        "gamma": g,
        "window": window,
        "fit": fit,
        "lambda_star": spec.lambda_star,
        "spectral": spec,
    });
    Ok(ReproRun { report: ReproReport::new("rate-lambda", checks, details), series: vec![("rate.csv".into(), r)] })
}
