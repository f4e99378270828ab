//! Experiment configuration: a TOML key-value file plus command-line overrides.

use serde::{Deserialize, Serialize};

use meanfield::fokkerplanck::MOLLIFY_CELLS;
use meanfield::invariant::stationary_cell_masses;
use meanfield::volterra::PicardOptions;
use meanfield::{Current, Drift, GridMeasure, ModelSpec, RateFn, SpatialGrid, Table, TimeGrid};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftCfg {
    /// `affine` or `tabulated`.
    pub kind: String,
    pub mu: f64,
    pub kappa: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Default for DriftCfg {
    fn default() -> Self {
        DriftCfg { kind: "affine".into(), mu: 1.0, kappa: 1.0, x: vec![], y: vec![] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateCfg {
    /// `power` or `tabulated`.
    pub kind: String,
    pub p: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Default for RateCfg {
    fn default() -> Self {
        RateCfg { kind: "power".into(), p: 2.0, x: vec![], y: vec![] }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingCfg {
    #[serde(rename = "J")]
    pub j: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurrentCfg {
    /// `constant`, `exp_approach` or `sampled`.
    pub kind: String,
    pub a: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    /// Spacing of `values` for a sampled current.
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Default for CurrentCfg {
    fn default() -> Self {
        CurrentCfg { kind: "constant".into(), a: 0.0, c: 0.0, lambda: 1.0, dt: 1e-2, values: vec![] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridCfg {
    pub t_end: f64,
    pub dt: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt_flow: f64,
}

impl Default for GridCfg {
    fn default() -> Self {
        GridCfg { t_end: 10.0, dt: 1e-3, x_max: 4.0, dx: 1e-3, dt_flow: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitCfg {
    /// `dirac`, `mollified`, `uniform` or `stationary`.
    pub kind: String,
    pub x: f64,
    pub lo: f64,
    pub hi: f64,
    /// Current of the stationary law.
    pub a: f64,
}

impl Default for InitCfg {
    fn default() -> Self {
        InitCfg { kind: "dirac".into(), x: 0.0, lo: 0.0, hi: 1.0, a: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleCfg {
    pub n: usize,
    pub replicas: usize,
    pub rate_bin: f64,
}

impl Default for ParticleCfg {
    fn default() -> Self {
        ParticleCfg { n: 1000, replicas: 1, rate_bin: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralCfg {
    /// Depths searched when `sigma_a` is infinite.
    pub floors: Vec<f64>,
    /// Fixed depth; overrides the automatic choice.
    pub sigma_floor: Option<f64>,
}

impl Default for SpectralCfg {
    fn default() -> Self {
        SpectralCfg { floors: meanfield::spectral::DEFAULT_FLOORS.to_vec(), sigma_floor: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpCfg {
    pub dt: f64,
    pub snapshots: Vec<f64>,
}

impl Default for FpCfg {
    fn default() -> Self {
        FpCfg { dt: 5e-4, snapshots: vec![] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyCfg {
    pub a_max: f64,
    pub n_scan: usize,
}

impl Default for SteadyCfg {
    fn default() -> Self {
        SteadyCfg { a_max: 5.0, n_scan: 400 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardCfg {
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
    /// Steps per window; 0 iterates on the whole horizon.
    pub window: usize,
}

impl Default for PicardCfg {
    fn default() -> Self {
        let d = PicardOptions::default();
        PicardCfg { tol: d.tol, max_iter: d.max_iter, relaxation: d.relaxation, window: d.window }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub drift: DriftCfg,
    pub rate: RateCfg,
    pub coupling: CouplingCfg,
    pub current: CurrentCfg,
    pub grid: GridCfg,
    pub init: InitCfg,
    pub particle: ParticleCfg,
    pub spectral: SpectralCfg,
    pub fp: FpCfg,
    pub steady: SteadyCfg,
    pub picard: PicardCfg,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model(&self) -> CliResult<ModelSpec> {
        let drift = match self.drift.kind.as_str() {
            "affine" => Drift::Affine { mu: self.drift.mu, kappa: self.drift.kappa },
            "tabulated" => Drift::Tabulated(Table::new(self.drift.x.clone(), self.drift.y.clone())?),
            k => return Err(CliError::Config(format!("unknown drift.kind `{k}`"))),
        };
        let rate = match self.rate.kind.as_str() {
            "power" => RateFn::Power { p: self.rate.p },
            "tabulated" => RateFn::Tabulated(Table::new(self.rate.x.clone(), self.rate.y.clone())?),
            k => return Err(CliError::Config(format!("unknown rate.kind `{k}`"))),
        };
        Ok(ModelSpec::new(drift, rate, self.coupling.j)?.with_dt_flow(self.grid.dt_flow)?)
    }

    pub fn current(&self) -> CliResult<Current> {
        let c = &self.current;
        let cur = match c.kind.as_str() {
            "constant" => Current::Constant { a: c.a },
            "exp_approach" => Current::ExpApproach { a: c.a, c: c.c, lambda: c.lambda },
            "sampled" => {
                if c.values.len() < 2 {
                    return Err(CliError::Config("a sampled current needs at least two values".into()));
                }
                Current::Sampled { grid: TimeGrid::new(0.0, c.dt, c.values.len() - 1)?, values: c.values.clone() }
            }
            k => return Err(CliError::Config(format!("unknown current.kind `{k}`"))),
        };
        cur.validate()?;
        Ok(cur)
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid> {
        Ok(TimeGrid::span(0.0, self.grid.t_end, self.grid.dt)?)
    }

    pub fn spatial_grid(&self) -> CliResult<SpatialGrid> {
        Ok(SpatialGrid::new(self.grid.x_max, self.grid.dx)?)
    }

    pub fn initial_law(&self, m: &ModelSpec) -> CliResult<GridMeasure> {
        let g = self.spatial_grid()?;
        let i = &self.init;
        Ok(match i.kind.as_str() {
            "dirac" => GridMeasure::dirac(i.x, g)?,
            "mollified" => GridMeasure::mollified_origin(MOLLIFY_CELLS, g)?,
            "uniform" => GridMeasure::uniform(i.lo, i.hi, g)?,
            "stationary" => {
                let cells: Vec<f64> = stationary_cell_masses(m, i.a, g)?.iter().map(|c| c / g.dx).collect();
                GridMeasure::from_cell_averages(g, &cells)?
            }
            k => return Err(CliError::Config(format!("unknown init.kind `{k}`"))),
        })
    }

    pub fn picard_options(&self) -> PicardOptions {
        let p = &self.picard;
        PicardOptions {
            tol: p.tol,
            max_iter: p.max_iter,
            relaxation: p.relaxation,
            window: if p.window == 0 { usize::MAX } else { p.window },
        }
    }
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// drift.mu
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// drift.kappa
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    /// rate.p
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// coupling.J
    #[arg(long = "J", global = true, allow_negative_numbers = true)]
    pub j: Option<f64>,
    /// current.a
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// current.C
    #[arg(long = "C", global = true, allow_negative_numbers = true)]
    pub c: Option<f64>,
    /// current.lambda
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// grid.t_end
    #[arg(long = "T", global = true, allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    /// grid.dt
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    /// grid.dx
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub dx: Option<f64>,
    /// grid.x_max
    #[arg(long = "x-max", global = true, allow_negative_numbers = true)]
    pub x_max: Option<f64>,
    /// init.kind
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub init: Option<String>,
    /// particle.n
    #[arg(long = "N", global = true, allow_negative_numbers = true)]
    pub n: Option<usize>,
    /// particle.replicas
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub replicas: Option<usize>,
    /// particle.rate_bin
    #[arg(long = "rate-bin", global = true, allow_negative_numbers = true)]
    pub rate_bin: Option<f64>,
    /// fp.dt
    #[arg(long = "fp-dt", global = true, allow_negative_numbers = true)]
    pub fp_dt: Option<f64>,
    /// steady.a_max
    #[arg(long = "a-max", global = true, allow_negative_numbers = true)]
    pub a_max: Option<f64>,
    /// spectral.sigma_floor
    #[arg(long = "sigma-floor", global = true, allow_negative_numbers = true)]
    pub sigma_floor: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut cfg.drift.mu, &self.mu);
        set(&mut cfg.drift.kappa, &self.kappa);
        set(&mut cfg.rate.p, &self.p);
        set(&mut cfg.coupling.j, &self.j);
        set(&mut cfg.current.a, &self.a);
        set(&mut cfg.current.c, &self.c);
        set(&mut cfg.current.lambda, &self.lambda);
        set(&mut cfg.grid.t_end, &self.t_end);
        set(&mut cfg.grid.dt, &self.dt);
        set(&mut cfg.grid.dx, &self.dx);
        set(&mut cfg.grid.x_max, &self.x_max);
        set(&mut cfg.init.kind, &self.init);
        set(&mut cfg.particle.n, &self.n);
        set(&mut cfg.particle.replicas, &self.replicas);
        set(&mut cfg.particle.rate_bin, &self.rate_bin);
        set(&mut cfg.fp.dt, &self.fp_dt);
        set(&mut cfg.steady.a_max, &self.a_max);
        if self.sigma_floor.is_some() {
            cfg.spectral.sigma_floor = self.sigma_floor;
        }
        if self.c.is_some() || self.lambda.is_some() {
            if cfg.current.kind == "constant" {
                cfg.current.kind = "exp_approach".into();
            }
        }
    }
}
