//! Stationary firing rate `gamma(a)`, invariant measures and steady states `a / gamma(a) = J`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{Atom, GridMeasure, SpatialGrid};
use crate::model::ModelSpec;
use crate::orbit::{Orbit, OrbitOptions};

/// Pre-normalization mass defect allowed for the stationary density.
pub const DEFECT_TOL: f64 = 1e-6;

/// `gamma(a) = 1 / ∫_0^∞ exp(-∫_0^t f(phi_u(0)) du) dt`.
pub fn gamma(m: &ModelSpec, a: f64) -> Result<f64> {
    let orbit = Orbit::new(m, a, OrbitOptions::default())?;
    gamma_from(&orbit)
}

fn gamma_from(orbit: &Orbit) -> Result<f64> {
    let inv = orbit.integrate(|_, _, h| h);
    if !(inv.is_finite() && inv > 0.0) {
        return Err(Error::Numerical(format!("survival integral is {inv} at a={}", orbit.a)));
    }
    Ok(1.0 / inv)
}

/// `U(a) = a / gamma(a)`.
pub fn u_of(m: &ModelSpec, a: f64) -> Result<f64> {
    Ok(a / gamma(m, a)?)
}

/// Invariant measure of the linear process at constant current `a`, with its mass defect.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub measure: GridMeasure,
    pub gamma: f64,
    /// Mass of the unnormalized quadrature minus one.
    pub defect: f64,
}

/// Invariant density on the grid, clipped to `[0, min(sigma_a, x_max)]`.
pub fn stationary_measure(m: &ModelSpec, a: f64, grid: SpatialGrid) -> Result<GridMeasure> {
    Ok(stationary(m, a, grid)?.measure)
}

/// Like [`stationary_measure`], also reporting `gamma(a)` and the quadrature defect.
///
/// The mass of the cell that contains `sigma_a` is kept as an atom at its conditional mean, so
/// the density never has to be evaluated at the edge of the support.
pub fn stationary(m: &ModelSpec, a: f64, grid: SpatialGrid) -> Result<Stationary> {
    let orbit = Orbit::new(m, a, OrbitOptions::default())?;
    let g = gamma_from(&orbit)?;
    let sigma = m.sigma(a);
    let x_lim = sigma.min(grid.x_max);
    let n = grid.len();
    let mut density = vec![0.0; n];
    let mut times = vec![0.0; n];
    let mut last = 0usize;
    for k in 0..n {
        let x = grid.x(k);
        if x >= x_lim || x >= orbit.x_end {
            break;
        }
        let t = match orbit.time_to_reach(m, x) {
            Some(t) => t,
            None => break,
        };
        let (_, hz) = orbit.state_at(m, t);
        density[k] = g * (-hz).exp() / (m.b(x) + a);
        times[k] = t;
        last = k;
    }
    let covered = sigma <= grid.x_max;
    let mut atoms = Vec::new();
    let mut k = last;
    loop {
        let t_k = times[k];
        let tail_mass = 1.0 - g * orbit.integrate_until(m, t_k, |_, _, h| h);
        let tail_first = g * (orbit.integrate(|_, x, h| x * h) - orbit.integrate_until(m, t_k, |_, x, h| x * h));
        let ramp = 0.5 * grid.dx * density[k];
        if !covered {
            if tail_mass > DEFECT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "grid up to x_max={} misses mass {tail_mass:e} of the invariant measure",
                    grid.x_max
                )));
            }
            break;
        }
        if k == last && grid.x(k) + grid.dx < x_lim && k + 1 < n {
            // the density carries the whole grid up to x_max already
            break;
        }
        if tail_mass >= ramp || k == 0 {
            let mass = (tail_mass - ramp).max(0.0);
            if mass > 0.0 {
                let x0 = grid.x(k);
                let loc = ((tail_first - ramp * (x0 + grid.dx / 3.0)) / mass).clamp(x0, sigma);
                atoms.push(Atom { x: loc, mass });
            }
            break;
        }
        density[k] = 0.0;
        k -= 1;
    }
    let (measure, mass) = GridMeasure::normalized(grid, density, atoms)?;
    let defect = mass - 1.0;
    if defect.abs() > DEFECT_TOL {
        return Err(Error::Numerical(format!(
            "invariant density quadrature has mass defect {defect:e}; refine the grid"
        )));
    }
    Ok(Stationary { measure, gamma: g, defect })
}

/// Exact masses of the invariant measure in the grid cells `[x_k, x_{k+1})`, the last cell
/// inside the support absorbing everything up to `sigma_a`.
pub fn stationary_cell_masses(m: &ModelSpec, a: f64, grid: SpatialGrid) -> Result<Vec<f64>> {
    let orbit = Orbit::new(m, a, OrbitOptions::default())?;
    let g = gamma_from(&orbit)?;
    let sigma = m.sigma(a);
    let n = grid.cells();
    let mut cells = vec![0.0; n];
    let mut below = 0.0;
    for (k, c) in cells.iter_mut().enumerate() {
        let x = grid.x(k + 1);
        let cum = if x >= sigma || x >= orbit.x_end || k + 1 == n {
            1.0
        } else {
            match orbit.time_to_reach(m, x) {
                Some(t) => (g * orbit.integrate_until(m, t, |_, _, h| h)).min(1.0),
                None => 1.0,
            }
        };
        *c = (cum - below).max(0.0);
        below = cum;
        if cum >= 1.0 {
            break;
        }
    }
    if sigma > grid.x_max {
        let missed = 1.0 - g * orbit.integrate_until(m, orbit.time_to_reach(m, grid.x_max).unwrap_or(orbit.t_end), |_, _, h| h);
        if missed > DEFECT_TOL {
            return Err(Error::InvalidArgument(format!(
                "grid up to x_max={} misses mass {missed:e} of the invariant measure",
                grid.x_max
            )));
        }
    }
    Ok(cells)
}

/// Invariant measure as atoms at the flow-time quadrature nodes of the orbit.
///
/// Works whatever the shape of the density near `sigma_a`.
pub fn stationary_measure_atomic(m: &ModelSpec, a: f64, grid: SpatialGrid) -> Result<GridMeasure> {
    let orbit = Orbit::new(m, a, OrbitOptions::default())?;
    let g = gamma_from(&orbit)?;
    if orbit.x_end > grid.x_max {
        return Err(Error::InvalidArgument(format!(
            "grid up to {} does not cover the orbit up to {}",
            grid.x_max, orbit.x_end
        )));
    }
    let mut atoms: Vec<Atom> =
        orbit.nodes.iter().map(|n| Atom { x: n.x, mass: g * n.w * (-n.hazard).exp() }).collect();
    atoms.push(Atom { x: orbit.x_end, mass: g * orbit.tail(|h| h) });
    Ok(GridMeasure::normalized(grid, vec![0.0; grid.len()], atoms)?.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub a: f64,
    pub gamma: f64,
    pub bracket: (f64, f64),
    /// `U` increasing through the root.
    pub stable_hint: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateReport {
    pub j: f64,
    pub a_grid: Vec<f64>,
    pub u_values: Vec<f64>,
    pub roots: Vec<SteadyState>,
    /// Largest coupling below which the scan shows a single root; `None` when `U` is monotone.
    pub j_m: Option<f64>,
}

/// Scans `U` on `n_scan` points of `[0, a_max]` and refines every sign change of `U - J`.
pub fn steady_states(m: &ModelSpec, a_max: f64, n_scan: usize) -> Result<SteadyStateReport> {
    if !(a_max > 0.0 && a_max.is_finite()) || n_scan < 2 {
        return Err(Error::InvalidArgument(format!("need a_max > 0 and n_scan >= 2, got {a_max}, {n_scan}")));
    }
    let j = m.coupling;
    let a_grid: Vec<f64> = (0..n_scan).map(|k| a_max * k as f64 / (n_scan - 1) as f64).collect();
    let u_values = a_grid.par_iter().map(|&a| u_of(m, a)).collect::<Result<Vec<f64>>>()?;
    let j_m = first_fold(&u_values);
    let mut roots = Vec::new();
    if j == 0.0 {
        roots.push(SteadyState { a: 0.0, gamma: gamma(m, 0.0)?, bracket: (0.0, 0.0), stable_hint: true });
    } else {
        for k in 0..n_scan - 1 {
            let (h0, h1) = (u_values[k] - j, u_values[k + 1] - j);
            if h0 == 0.0 {
                let up = h1 > 0.0;
                roots.push(SteadyState { a: a_grid[k], gamma: gamma(m, a_grid[k])?, bracket: (a_grid[k], a_grid[k]), stable_hint: up });
            } else if h0 * h1 < 0.0 {
                let (mut lo, mut hi) = (a_grid[k], a_grid[k + 1]);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let hm = u_of(m, mid)? - j;
                    if (hm < 0.0) == (h0 < 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-13 * (1.0 + hi) {
                        break;
                    }
                }
                let a = 0.5 * (lo + hi);
                roots.push(SteadyState { a, gamma: gamma(m, a)?, bracket: (a_grid[k], a_grid[k + 1]), stable_hint: h0 < 0.0 });
            }
        }
        if u_values[n_scan - 1] == j {
            let a = a_grid[n_scan - 1];
            roots.push(SteadyState { a, gamma: gamma(m, a)?, bracket: (a, a), stable_hint: true });
        }
    }
    if roots.is_empty() {
        return Err(Error::Numerical(format!(
            "no steady state in [0, {a_max}] for J={j}; increase a_max"
        )));
    }
    Ok(SteadyStateReport { j, a_grid, u_values, roots, j_m })
}

/// Smallest value of `U` after its first local maximum.
fn first_fold(u: &[f64]) -> Option<f64> {
    let peak = (1..u.len()).find(|&k| u[k] < u[k - 1])?;
    Some(u[peak - 1..].iter().cloned().fold(f64::INFINITY, f64::min))
}
