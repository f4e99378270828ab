//! One pipeline per subcommand. Each writes its files and returns the summary results.

use serde::Serialize;
use serde_json::{json, Value};

use meanfield::fokkerplanck::fp_solve_with;
use meanfield::invariant::{gamma, stationary, steady_states, u_of};
use meanfield::particle::{empirical_rate_pooled, replay, simulate_replicas, ParticleConfig, ParticleTrace};
use meanfield::spectral::{lambda_star, lambda_star_auto, SpectralReport};
use meanfield::volterra::{picard_closure, solve_rate, PicardResult, RateSolution};
use meanfield::{ModelSpec, TimeGrid};

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output::Output;

/// Status string and summary results of a pipeline.
pub type Outcome = (&'static str, Value);

fn write_rate(out: &mut Output, name: &str, rate: &RateSolution) -> CliResult<()> {
    out.csv(name, |w| Ok(rate.write_csv(w)?))
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let m = cfg.model()?;
    let traces = particles(cfg, &m)?;
    out.csv("spikes.csv", |w| {
        writeln!(w, "replica,time,neuron")?;
        for (r, tr) in traces.iter().enumerate() {
            for e in &tr.events {
                writeln!(w, "{r},{},{}", e.t, e.neuron)?;
            }
        }
        Ok(())
    })?;
    let emp = empirical_rate_pooled(&traces, TimeGrid::span(0.0, cfg.grid.t_end, cfg.particle.rate_bin)?)?;
    write_rate(out, "rate.csv", &emp.rate)?;
    let replay_deviation = replay(&m, &traces[0])?;
    Ok((
        "ok",
        json!({
            "n": cfg.particle.n,
            "replicas": traces.len(),
            "spikes": emp.spikes,
            "relative_error": emp.relative_error,
            "replay_deviation": replay_deviation,
        }),
    ))
}

fn particles(cfg: &ExperimentConfig, m: &ModelSpec) -> CliResult<Vec<ParticleTrace>> {
    let pc = ParticleConfig {
        rate_bin: cfg.particle.rate_bin,
        ..ParticleConfig::new(cfg.particle.n, cfg.grid.t_end, cfg.seed, cfg.initial_law(m)?)
    };
    Ok(simulate_replicas(m, &pc, cfg.particle.replicas.max(1))?)
}

pub fn rate(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let m = cfg.model()?;
    let cur = cfg.current()?;
    let sol = solve_rate(&m, &cur, &cfg.initial_law(&m)?, cfg.time_grid()?)?;
    write_rate(out, "rate.csv", &sol)?;
    let stationary_rate = match cur.as_constant() {
        Some(a) => Some(gamma(&m, a)?),
        None => None,
    };
    Ok(("ok", json!({ "r_end": sol.values.last(), "gamma": stationary_rate })))
}

/// Nonlinear rate from the configured initial law.
pub fn run_picard(cfg: &ExperimentConfig) -> CliResult<PicardResult> {
    let m = cfg.model()?;
    Ok(picard_closure(&m, &cfg.initial_law(&m)?, cfg.time_grid()?, cfg.picard_options())?)
}

pub fn picard(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let res = run_picard(cfg)?;
    write_rate(out, "rate.csv", &res.rate)?;
    let t = cfg.grid.t_end;
    Ok((
        "ok",
        json!({
            "iterations": res.iterations,
            "sweeps": res.sweeps,
            "residual": res.residual,
            "above_bound": res.above_bound,
            "r_end": res.rate.values.last(),
            "amplitude_last_quarter": res.rate.amplitude(0.75 * t, t),
        }),
    ))
}

pub fn invariant(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let m = cfg.model()?;
    let a = cfg.current.a;
    let st = stationary(&m, a, cfg.spatial_grid()?)?;
    out.csv("density.csv", |w| Ok(st.measure.write_csv(w)?))?;
    Ok((
        "ok",
        json!({
            "a": a,
            "gamma": st.gamma,
            "sigma": m.sigma(a),
            "u": u_of(&m, a)?,
            "defect": st.defect,
        }),
    ))
}

pub fn steady(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let m = cfg.model()?;
    let rep = steady_states(&m, cfg.steady.a_max, cfg.steady.n_scan)?;
    out.csv("scan.csv", |w| {
        writeln!(w, "a,U")?;
        for (a, u) in rep.a_grid.iter().zip(&rep.u_values) {
            writeln!(w, "{a},{u}")?;
        }
        Ok(())
    })?;
    out.csv("roots.csv", |w| {
        writeln!(w, "a,gamma,stable_hint")?;
        for r in &rep.roots {
            writeln!(w, "{},{},{}", r.a, r.gamma, r.stable_hint)?;
        }
        Ok(())
    })?;
    Ok((
        "ok",
        json!({
            "J": rep.j,
            "count": rep.roots.len(),
            "roots": rep.roots,
            "j_m": rep.j_m,
        }),
    ))
}

/// Spectral report at the configured current, with a fixed depth when one is given.
pub fn run_spectral(cfg: &ExperimentConfig) -> CliResult<SpectralReport> {
    let m = cfg.model()?;
    let a = cfg.current.a;
    Ok(match cfg.spectral.sigma_floor {
        Some(floor) => lambda_star(&m, a, floor)?,
        None => lambda_star_auto(&m, a, &cfg.spectral.floors)?,
    })
}

pub fn spectral(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let rep = run_spectral(cfg)?;
    out.csv("zeros.csv", |w| {
        writeln!(w, "re,im,residual,multiplicity")?;
        for z in &rep.zeros {
            writeln!(w, "{},{},{},{}", z.re, z.im, z.residual, z.multiplicity)?;
        }
        Ok(())
    })?;
    let status = if rep.conclusive { "ok" } else { "lower_bound" };
    Ok((status, serde_json::to_value(&rep).map_err(std::io::Error::other)?))
}

pub fn fokker_planck(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let m = cfg.model()?;
    let init = cfg.initial_law(&m)?;
    let sol = fp_solve_with(&m, &init, cfg.grid.t_end, cfg.grid.dx, cfg.fp.dt, &cfg.fp.snapshots)?;
    // thin to the output step when it is a multiple of the solver step
    let rate = cfg.time_grid().ok().and_then(|g| sol.rate.restrict(g).ok()).unwrap_or_else(|| sol.rate.clone());
    write_rate(out, "rate.csv", &rate)?;
    for (k, (_, snap)) in sol.snapshots.iter().enumerate() {
        out.csv(&format!("density_{k}.csv"), |w| Ok(snap.write_csv(w)?))?;
    }
    out.csv("density.csv", |w| Ok(sol.state.to_measure()?.write_csv(w)?))?;
    let t = cfg.grid.t_end;
    Ok((
        "ok",
        json!({
            "r_end": sol.rate.values.last(),
            "mass": sol.state.mass(),
            "amplitude_last_quarter": sol.rate.amplitude(0.75 * t, t),
            "snapshot_times": sol.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(),
        }),
    ))
}

/// Largest allowed excess of the rate gap over three standard errors.
pub const CHAOS_BUDGET: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub n: usize,
    pub replicas: usize,
    pub spikes: usize,
    /// `sup_t |empirical - mean field|` over the bins.
    pub sup_distance: f64,
    /// Standard error at the bin attaining the largest excess.
    pub se_at_worst: f64,
    /// `max_t (|empirical - mean field| - 3 SE)`.
    pub excess: f64,
    pub budget: f64,
    pub passed: bool,
    #[serde(skip)]
    pub empirical: RateSolution,
    #[serde(skip)]
    pub mean_field: RateSolution,
}

/// Pooled empirical rate against bin averages of the Picard rate.
pub fn run_chaos(cfg: &ExperimentConfig) -> CliResult<ChaosReport> {
    let m = cfg.model()?;
    let traces = particles(cfg, &m)?;
    let bins = TimeGrid::span(0.0, cfg.grid.t_end, cfg.particle.rate_bin)?;
    let emp = empirical_rate_pooled(&traces, bins)?;
    let pic = run_picard(cfg)?.rate;
    let mean_field = bin_average(&pic, bins);
    let se = emp.rate.stderr.clone().unwrap_or_default();
    let (mut sup, mut excess, mut se_at_worst) = (0.0f64, f64::NEG_INFINITY, 0.0);
    for k in 0..bins.len() {
        let d = (emp.rate.values[k] - mean_field.values[k]).abs();
        sup = sup.max(d);
        let e = d - 3.0 * se[k];
        if e > excess {
            excess = e;
            se_at_worst = se[k];
        }
    }
    Ok(ChaosReport {
        n: cfg.particle.n,
        replicas: traces.len(),
        spikes: emp.spikes,
        sup_distance: sup,
        se_at_worst,
        excess,
        budget: CHAOS_BUDGET,
        passed: excess <= CHAOS_BUDGET,
        empirical: emp.rate,
        mean_field,
    })
}

/// Averages of `fine` over bins of width `bins.dt` centred on the nodes and clipped to the horizon.
fn bin_average(fine: &RateSolution, bins: TimeGrid) -> RateSolution {
    let t_end = fine.grid.t_end();
    let values = (0..bins.len())
        .map(|k| {
            let lo = (bins.t(k) - 0.5 * bins.dt).max(fine.grid.t0);
            let hi = (bins.t(k) + 0.5 * bins.dt).min(t_end);
            let (i0, i1) = (fine.grid.nearest(lo), fine.grid.nearest(hi));
            if i1 == i0 {
                return fine.values[i0];
            }
            let dt = fine.grid.dt;
            let s: f64 = (i0..i1).map(|i| 0.5 * dt * (fine.values[i] + fine.values[i + 1])).sum();
            s / (dt * (i1 - i0) as f64)
        })
        .collect();
    RateSolution::new(bins, values)
}

pub fn chaos_check(cfg: &ExperimentConfig, out: &mut Output) -> CliResult<Outcome> {
    let rep = run_chaos(cfg)?;
    out.csv("rates.csv", |w| {
        writeln!(w, "t,empirical,stderr,mean_field")?;
        let se = rep.empirical.stderr.as_deref().unwrap_or(&[]);
        for k in 0..rep.empirical.values.len() {
            writeln!(w, "{},{},{},{}", rep.empirical.grid.t(k), rep.empirical.values[k], se[k], rep.mean_field.values[k])?;
        }
        Ok(())
    })?;
    let status = if rep.passed { "ok" } else { "exceeds_budget" };
    Ok((status, serde_json::to_value(&rep).map_err(std::io::Error::other)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_average_of_linear_is_midpoint() {
        let fine = TimeGrid::span(0.0, 1.0, 1e-3).unwrap();
        let r = RateSolution::new(fine, fine.times());
        let b = bin_average(&r, TimeGrid::span(0.0, 1.0, 0.1).unwrap());
        assert!((b.values[3] - 0.3).abs() < 1e-12);
        assert!((b.values[0] - 0.025).abs() < 1e-12);
        assert!((b.values[10] - 0.975).abs() < 1e-12);
    }
}
