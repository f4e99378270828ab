//! Exact event-driven simulation of the finite network.
//!
//! Every neuron carries a unit-exponential threshold and fires when the hazard accumulated along
//! its deterministic flow reaches it. Kicks move potentials but leave the remaining thresholds
//! untouched, which is exact by memorylessness.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::GridMeasure;
use crate::model::{Current, ModelSpec, StepMap, TimeGrid};
use crate::quadrature::{gl4, GaussLegendre};
use crate::volterra::RateSolution;

const WEYL: u64 = 0x9E37_79B9_7F4A_7C15;
/// Width of one Gauss–Legendre panel along a flow.
const PANEL: f64 = 0.05;
/// Steps shorter than this use a single three-point rule.
const SHORT_STEP: f64 = 1e-2;
const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub n_neurons: usize,
    pub t_end: f64,
    pub seed: u64,
    /// Law of the i.i.d. initial potentials.
    pub init: GridMeasure,
    /// Histogram bin of the empirical rate.
    pub rate_bin: f64,
    /// Times at which all potentials are recorded.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl ParticleConfig {
    pub fn new(n_neurons: usize, t_end: f64, seed: u64, init: GridMeasure) -> Self {
        ParticleConfig { n_neurons, t_end, seed, init, rate_bin: 0.1, snapshot_times: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_neurons == 0 || self.n_neurons > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("n_neurons = {} is out of range", self.n_neurons)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.rate_bin > 0.0 && self.rate_bin <= self.t_end) {
            return Err(Error::InvalidArgument(format!("rate_bin must lie in (0, t_end], got {}", self.rate_bin)));
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) {
            return Err(Error::InvalidArgument("snapshot times must lie in [0, t_end]".into()));
        }
        if (self.init.mass() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument("initial law must be a probability measure".into()));
        }
        Ok(())
    }

    /// Configuration of replica `r`, with a derived seed.
    pub fn replica(&self, r: usize) -> Self {
        ParticleConfig { seed: replica_seed(self.seed, r), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub t: f64,
    pub neuron: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleTrace {
    pub n_neurons: usize,
    pub t_end: f64,
    pub coupling: f64,
    pub seed: u64,
    pub rate_bin: f64,
    pub initial: Vec<f64>,
    /// Spikes in simulation order; times are nondecreasing.
    pub events: Vec<Spike>,
    pub final_potentials: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

impl ParticleTrace {
    /// Spike counts per neuron.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_neurons];
        for e in &self.events {
            c[e.neuron as usize] += 1;
        }
        c
    }

    /// Writes `time,neuron`.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "time,neuron")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.t, e.neuron)?;
        }
        Ok(())
    }
}

/// Seed that makes neuron 0 of a run replay neuron `i` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(WEYL))
}

fn neuron_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, i))
}

fn replica_seed(seed: u64, r: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (r as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gl3() -> &'static GaussLegendre {
    static Q: OnceLock<GaussLegendre> = OnceLock::new();
    Q.get_or_init(|| GaussLegendre::new(3))
}

/// Quadrature for `∫_0^h f(phi_u(x)) du` on a flow without current.
struct HazardRule {
    map: StepMap,
    weights: Vec<f64>,
    /// Index of the endpoint in the map fractions.
    end: usize,
    buf: Vec<f64>,
}

impl HazardRule {
    fn new(m: &ModelSpec, h: f64) -> Self {
        let (rule, panels) = if h <= SHORT_STEP { (gl3(), 1) } else { (gl4(), (h / PANEL).ceil() as usize) };
        let mut fr = Vec::with_capacity(panels * rule.len() + 1);
        let mut weights = Vec::with_capacity(panels * rule.len());
        for p in 0..panels {
            for (c, w) in rule.nodes.iter().zip(&rule.weights) {
                fr.push((p as f64 + c) / panels as f64);
                weights.push(w * h / panels as f64);
            }
        }
        fr.push(1.0);
        let end = fr.len() - 1;
        let map = StepMap::new(m, &Current::constant(0.0), 0.0, h, &fr);
        HazardRule { map, weights, end, buf: vec![0.0; end + 1] }
    }

    /// `(hazard, endpoint)` from `x`.
    #[inline]
    fn run(&mut self, m: &ModelSpec, x: f64) -> (f64, f64) {
        self.map.apply(m, &Current::constant(0.0), x, &mut self.buf);
        let mut hz = 0.0;
        for (w, y) in self.weights.iter().zip(&self.buf) {
            hz += w * m.f(y.max(0.0));
        }
        (hz, self.buf[self.end].max(0.0))
    }
}

fn flow0(m: &ModelSpec, x: f64, h: f64) -> f64 {
    m.flow(&Current::constant(0.0), 0.0, h, x).max(0.0)
}

/// Offset in `(0, h]` at which the hazard from `x` reaches `target`, given that it does by `h`.
fn hazard_root(m: &ModelSpec, x: f64, target: f64, h: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, h);
    let fx = m.f(x);
    let mut s = if fx > 0.0 { (target / fx).min(h) } else { 0.5 * h };
    for _ in 0..200 {
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let (hz, xe) = HazardRule::new(m, s).run(m, x);
        let g = hz - target;
        if g.abs() <= ROOT_TOL * target.max(1.0) {
            return s;
        }
        if g < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            return hi;
        }
        let d = m.f(xe);
        s = if d > 0.0 { s - g / d } else { 0.5 * (lo + hi) };
    }
    0.5 * (lo + hi)
}

/// Simulates the network; `J = 0` and `N = 1` runs split into independent neurons.
pub fn simulate(m: &ModelSpec, cfg: &ParticleConfig) -> Result<ParticleTrace> {
    cfg.validate()?;
    if m.coupling == 0.0 || cfg.n_neurons == 1 {
        Ok(simulate_independent(m, cfg))
    } else {
        simulate_coupled(m, cfg)
    }
}

/// Simulates replicas `0..count` in parallel.
pub fn simulate_replicas(m: &ModelSpec, cfg: &ParticleConfig, count: usize) -> Result<Vec<ParticleTrace>> {
    (0..count).into_par_iter().map(|r| simulate(m, &cfg.replica(r))).collect()
}

struct Neuron {
    events: Vec<f64>,
    initial: f64,
    last: f64,
    snaps: Vec<f64>,
}

fn run_single(m: &ModelSpec, cfg: &ParticleConfig, i: usize) -> Neuron {
    let mut rng = neuron_rng(cfg.seed, i);
    let x0 = cfg.init.sampler().sample(&mut rng);
    let mut marks: Vec<(f64, usize)> = cfg.snapshot_times.iter().cloned().zip(0..).collect();
    marks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut snaps = vec![0.0; marks.len()];
    let mut next_mark = 0;
    let mut events = Vec::new();
    let (mut t, mut x) = (0.0, x0);
    let mut residual: f64 = Exp1.sample(&mut rng);
    let window: f64 = 1.0;
    loop {
        let stop = marks.get(next_mark).map_or(cfg.t_end, |m| m.0).min(cfg.t_end);
        let h = window.min(stop - t);
        if h > 0.0 {
            let (hz, xe) = HazardRule::new(m, h).run(m, x);
            if hz >= residual {
                let s = hazard_root(m, x, residual, h);
                t += s;
                events.push(t);
                x = 0.0;
                residual = Exp1.sample(&mut rng);
                continue;
            }
            residual -= hz;
            x = xe;
            t += h;
            if t < stop {
                continue;
            }
        }
        t = stop;
        if next_mark < marks.len() && marks[next_mark].0 <= t {
            snaps[marks[next_mark].1] = x;
            next_mark += 1;
            continue;
        }
        if t >= cfg.t_end {
            break;
        }
    }
    Neuron { events, initial: x0, last: x, snaps }
}

fn simulate_independent(m: &ModelSpec, cfg: &ParticleConfig) -> ParticleTrace {
    let neurons: Vec<Neuron> = (0..cfg.n_neurons).into_par_iter().map(|i| run_single(m, cfg, i)).collect();
    let mut events: Vec<Spike> = neurons
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.events.iter().map(move |&t| Spike { t, neuron: i as u32 }))
        .collect();
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap().then(a.neuron.cmp(&b.neuron)));
    let snapshots = cfg
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, neurons.iter().map(|n| n.snaps[k]).collect()))
        .collect();
    ParticleTrace {
        n_neurons: cfg.n_neurons,
        t_end: cfg.t_end,
        coupling: m.coupling,
        seed: cfg.seed,
        rate_bin: cfg.rate_bin,
        initial: neurons.iter().map(|n| n.initial).collect(),
        events,
        final_potentials: neurons.iter().map(|n| n.last).collect(),
        snapshots,
    }
}

fn simulate_coupled(m: &ModelSpec, cfg: &ParticleConfig) -> Result<ParticleTrace> {
    let n = cfg.n_neurons;
    let kick = m.coupling / n as f64;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| neuron_rng(cfg.seed, i)).collect();
    let sampler = cfg.init.sampler();
    let initial: Vec<f64> = rngs.iter_mut().map(|r| sampler.sample(r)).collect();
    let mut residual: Vec<f64> = rngs.iter_mut().map(|r| Exp1.sample(r)).collect();
    let mut x = initial.clone();
    let mut marks: Vec<(f64, usize)> = cfg.snapshot_times.iter().cloned().zip(0..).collect();
    marks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut snapshots: Vec<(f64, Vec<f64>)> = cfg.snapshot_times.iter().map(|&t| (t, Vec::new())).collect();
    let mut next_mark = 0;
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut horizon: f64 = 0.01;
    let mut lower = vec![0.0; n];
    let mut cand: Vec<(f64, usize)> = Vec::new();
    loop {
        if next_mark < marks.len() && marks[next_mark].0 <= t {
            snapshots[marks[next_mark].1].1 = x.clone();
            next_mark += 1;
            continue;
        }
        if t >= cfg.t_end {
            break;
        }
        let stop = marks.get(next_mark).map_or(cfg.t_end, |mk| mk.0).min(cfg.t_end);
        let h = horizon.min(stop - t);
        // lower bounds on the firing offsets: the flow is monotone, so f is largest at an endpoint
        cand.clear();
        let end = StepMap::new(m, &Current::constant(0.0), 0.0, h, &[1.0]);
        let mut e = [0.0];
        for j in 0..n {
            end.apply(m, &Current::constant(0.0), x[j], &mut e);
            let fmax = m.f(x[j].max(e[0]).max(0.0));
            lower[j] = if fmax > 0.0 { residual[j] / fmax } else { f64::INFINITY };
            if lower[j] < h {
                cand.push((lower[j], j));
            }
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut best: Option<(f64, usize)> = None;
        for &(lb, j) in &cand {
            if let Some((s, _)) = best {
                if lb > s {
                    break;
                }
            }
            let (hz, _) = HazardRule::new(m, h).run(m, x[j]);
            if hz < residual[j] {
                continue;
            }
            let s = hazard_root(m, x[j], residual[j], h);
            if best.map_or(true, |(bs, bj)| s < bs || (s == bs && j < bj)) {
                best = Some((s, j));
            }
        }
        let step = best.map_or(h, |b| b.0);
        if step > 0.0 {
            let mut rule = HazardRule::new(m, step);
            for j in 0..n {
                let (hz, xe) = rule.run(m, x[j]);
                residual[j] -= hz;
                x[j] = xe;
            }
        }
        t = if best.is_some() { t + step } else { stop.min(t + h) };
        match best {
            Some((_, i)) => {
                for (j, xj) in x.iter_mut().enumerate() {
                    if j != i {
                        *xj += kick;
                    }
                }
                x[i] = 0.0;
                residual[i] = Exp1.sample(&mut rngs[i]);
                events.push(Spike { t, neuron: i as u32 });
                horizon = if cand.len() > 8 { 0.5 * horizon } else { horizon };
            }
            None => horizon = (2.0 * horizon).min(1.0),
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("event time".into()));
        }
    }
    Ok(ParticleTrace {
        n_neurons: n,
        t_end: cfg.t_end,
        coupling: m.coupling,
        seed: cfg.seed,
        rate_bin: cfg.rate_bin,
        initial,
        events,
        final_potentials: x,
        snapshots,
    })
}

/// Recomputes the final potentials from the initial ones and the spike log; returns the largest
/// deviation from the recorded potentials.
pub fn replay(m: &ModelSpec, trace: &ParticleTrace) -> Result<f64> {
    let n = trace.n_neurons;
    let kick = trace.coupling / n as f64;
    let mut x = trace.initial.clone();
    let mut t = 0.0;
    for e in &trace.events {
        if e.t < t || e.t > trace.t_end {
            return Err(Error::InvalidArgument(format!("spike at {} out of order", e.t)));
        }
        let h = e.t - t;
        if h > 0.0 {
            for xj in x.iter_mut() {
                *xj = flow0(m, *xj, h);
            }
        }
        for (j, xj) in x.iter_mut().enumerate() {
            if j != e.neuron as usize {
                *xj += kick;
            }
        }
        x[e.neuron as usize] = 0.0;
        if x.iter().any(|v| *v < 0.0) {
            return Err(Error::Numerical("negative potential in replay".into()));
        }
        t = e.t;
    }
    let h = trace.t_end - t;
    let dev = x
        .iter()
        .zip(&trace.final_potentials)
        .map(|(a, b)| (flow0(m, *a, h) - b).abs())
        .fold(0.0, f64::max);
    Ok(dev)
}

/// Binned rate with binomial standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRate {
    pub rate: RateSolution,
    pub spikes: usize,
    /// `1 / sqrt(spikes)`, infinite without spikes.
    pub relative_error: f64,
}

/// Spikes per neuron and unit time in bins of width `grid.dt` centred on the grid nodes.
pub fn empirical_rate(trace: &ParticleTrace, grid: TimeGrid) -> Result<EmpiricalRate> {
    empirical_rate_pooled(std::slice::from_ref(trace), grid)
}

/// Pools several runs with the same network size.
pub fn empirical_rate_pooled(traces: &[ParticleTrace], grid: TimeGrid) -> Result<EmpiricalRate> {
    let first = traces.first().ok_or_else(|| Error::InvalidArgument("no traces".into()))?;
    if traces.iter().any(|t| t.n_neurons != first.n_neurons) {
        return Err(Error::InvalidArgument("pooled traces differ in network size".into()));
    }
    let t_end = traces.iter().map(|t| t.t_end).fold(f64::INFINITY, f64::min);
    if grid.t0 < -1e-12 || grid.t_end() > t_end + 1e-9 {
        return Err(Error::InvalidArgument(format!("grid exceeds [0, {t_end}]")));
    }
    let mut counts = vec![0usize; grid.len()];
    let mut spikes = 0;
    for tr in traces {
        for e in &tr.events {
            let k = ((e.t - grid.t0) / grid.dt + 0.5).floor();
            if k >= 0.0 && (k as usize) < grid.len() {
                counts[k as usize] += 1;
                spikes += 1;
            }
        }
    }
    let pop = (first.n_neurons * traces.len()) as f64;
    let mut values = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for (k, &c) in counts.iter().enumerate() {
        let lo = (grid.t(k) - 0.5 * grid.dt).max(0.0);
        let hi = (grid.t(k) + 0.5 * grid.dt).min(t_end);
        let width = hi - lo;
        let p = c as f64 / pop;
        values.push(p / width);
        let var = if p < 1.0 { p * (1.0 - p) } else { p };
        se.push((var / pop).sqrt() / width);
    }
    let mut rate = RateSolution::new(grid, values);
    rate.stderr = Some(se);
    let relative_error = if spikes == 0 { f64::INFINITY } else { 1.0 / (spikes as f64).sqrt() };
    Ok(EmpiricalRate { rate, spikes, relative_error })
}
