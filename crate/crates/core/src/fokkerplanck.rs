//! Conservative finite-volume solver for the nonlinear transport equation with killing at rate `f`
//! and re-injection at the origin.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{GridMeasure, SpatialGrid};
use crate::model::{ModelSpec, TimeGrid};
use crate::volterra::RateSolution;

pub const CFL_MAX: f64 = 0.9;
/// Cells over which an atom at the origin is spread.
pub const MOLLIFY_CELLS: usize = 3;
const MASS_DRIFT_TOL: f64 = 1e-8;

/// Cell densities on `[0, x_max]` at time `t` together with the current rate.
#[derive(Debug, Clone, Serialize)]
pub struct FPState {
    pub grid: SpatialGrid,
    pub cells: Vec<f64>,
    pub t: f64,
    pub rate: f64,
}

impl FPState {
    pub fn new(m: &ModelSpec, init: &GridMeasure) -> Result<Self> {
        let cells = init.to_cell_averages(MOLLIFY_CELLS);
        let grid = init.grid;
        let rate = (0..cells.len()).map(|i| m.f(centre(&grid, i)) * cells[i]).sum::<f64>() * grid.dx;
        let st = FPState { grid, cells, t: 0.0, rate };
        st.check_mass()?;
        Ok(st)
    }

    /// State from cell masses (not densities), renormalized to one.
    pub fn from_cell_masses(m: &ModelSpec, grid: SpatialGrid, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.cells() {
            return Err(Error::GridMismatch(format!("{} cells for a grid with {}", masses.len(), grid.cells())));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || masses.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("cell masses must be nonnegative with positive sum".into()));
        }
        let cells: Vec<f64> = masses.iter().map(|v| v / (total * grid.dx)).collect();
        let rate = (0..cells.len()).map(|i| m.f(centre(&grid, i)) * cells[i]).sum::<f64>() * grid.dx;
        Ok(FPState { grid, cells, t: 0.0, rate })
    }

    pub fn mass(&self) -> f64 {
        self.cells.iter().sum::<f64>() * self.grid.dx
    }

    /// `nu(t, 0) = r_t / (b(0) + J r_t)` as resolved by the scheme: the density of the first cell.
    pub fn boundary_value(&self) -> f64 {
        self.cells[0]
    }

    pub fn to_measure(&self) -> Result<GridMeasure> {
        GridMeasure::from_cell_averages(self.grid, &self.cells)
    }

    fn check_mass(&self) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_DRIFT_TOL {
            return Err(Error::Numerical(format!("mass drifted to {mass} at t={}", self.t)));
        }
        Ok(())
    }
}

fn centre(g: &SpatialGrid, i: usize) -> f64 {
    (i as f64 + 0.5) * g.dx
}

/// Per-grid coefficients reused across steps.
struct Stepper {
    /// `b` at cell faces `0..=cells`.
    b_face: Vec<f64>,
    f_centre: Vec<f64>,
    coupling: f64,
    flux: Vec<f64>,
    dt: f64,
    /// `1 - e^{-f dt}` per cell.
    kill: Vec<f64>,
}

impl Stepper {
    fn new(m: &ModelSpec, grid: &SpatialGrid, dt: f64) -> Self {
        let n = grid.cells();
        let f_centre: Vec<f64> = (0..n).map(|i| m.f(centre(grid, i))).collect();
        Stepper {
            b_face: (0..=n).map(|k| m.b(grid.x(k))).collect(),
            kill: f_centre.iter().map(|f| -(-f * dt).exp_m1()).collect(),
            f_centre,
            coupling: m.coupling,
            flux: vec![0.0; n + 1],
            dt,
        }
    }

    fn max_speed(&self, rate: f64) -> f64 {
        let s = self.coupling * rate;
        self.b_face.iter().map(|b| (b + s).abs()).fold(0.0, f64::max)
    }

    fn step(&mut self, st: &mut FPState) -> Result<()> {
        let (dx, dt) = (st.grid.dx, self.dt);
        let n = st.cells.len();
        let shift = self.coupling * st.rate;
        let cfl = dt * self.max_speed(st.rate) / dx;
        if cfl > CFL_MAX {
            return Err(Error::StepSize(format!("CFL number {cfl:.3} exceeds {CFL_MAX} at t={}", st.t)));
        }
        // zero flux through both ends; mass enters at 0 only by re-injection
        self.flux[0] = 0.0;
        self.flux[n] = 0.0;
        for k in 1..n {
            let v = self.b_face[k] + shift;
            self.flux[k] = if v > 0.0 { v * st.cells[k - 1] } else { v * st.cells[k] };
        }
        let lam = dt / dx;
        let mut removed = 0.0;
        let mut rate = 0.0;
        for i in 0..n {
            let moved = st.cells[i] - lam * (self.flux[i + 1] - self.flux[i]);
            let lost = moved * self.kill[i];
            removed += lost;
            st.cells[i] = moved - lost;
        }
        st.cells[0] += removed;
        for i in 0..n {
            if st.cells[i] < 0.0 {
                return Err(Error::StepSize(format!("negative density {} in cell {i} at t={}", st.cells[i], st.t)));
            }
            rate += self.f_centre[i] * st.cells[i];
        }
        st.rate = rate * dx;
        st.t += dt;
        Ok(())
    }
}

/// One explicit step of length `dt`.
pub fn fp_step(m: &ModelSpec, state: &FPState, dt: f64) -> Result<FPState> {
    let mut st = state.clone();
    Stepper::new(m, &state.grid, dt).step(&mut st)?;
    st.check_mass()?;
    Ok(st)
}

#[derive(Debug, Clone)]
pub struct FpSolution {
    /// `r_t` at every step.
    pub rate: RateSolution,
    pub state: FPState,
    /// Density snapshots at the requested times.
    pub snapshots: Vec<(f64, GridMeasure)>,
}

/// Largest step satisfying the CFL bound with margin `safety` for rates up to `rate_cap`.
pub fn stable_dt(m: &ModelSpec, grid: &SpatialGrid, rate_cap: f64, safety: f64) -> f64 {
    let s = m.coupling * rate_cap;
    let v = (0..=grid.cells()).map(|k| (m.b(grid.x(k)) + s).abs()).fold(0.0, f64::max);
    safety * CFL_MAX * grid.dx / v.max(1e-300)
}

/// Integrates from `init` up to `t_end` with steps `dt` on the grid of `init`, whose spacing must be `dx`.
pub fn fp_solve(m: &ModelSpec, init: &GridMeasure, t_end: f64, dx: f64, dt: f64) -> Result<FpSolution> {
    fp_solve_with(m, init, t_end, dx, dt, &[])
}

pub fn fp_solve_with(m: &ModelSpec, init: &GridMeasure, t_end: f64, dx: f64, dt: f64, snapshot_times: &[f64]) -> Result<FpSolution> {
    if (init.grid.dx - dx).abs() > 1e-12 * dx {
        return Err(Error::GridMismatch(format!("initial law has dx={} but dx={dx} was requested", init.grid.dx)));
    }
    fp_run(m, FPState::new(m, init)?, t_end, dt, snapshot_times)
}

/// Advances `state` to `state.t + t_end`; snapshot times are relative to the start.
pub fn fp_run(m: &ModelSpec, mut state: FPState, t_end: f64, dt: f64, snapshot_times: &[f64]) -> Result<FpSolution> {
    let grid = TimeGrid::span(0.0, t_end, dt)?;
    let mut stepper = Stepper::new(m, &state.grid, grid.dt);
    let mut values = Vec::with_capacity(grid.len());
    values.push(state.rate);
    let marks: Vec<usize> = snapshot_times.iter().map(|&t| grid.nearest(t)).collect();
    let mut snapshots = Vec::new();
    for (j, &k) in marks.iter().enumerate() {
        if k == 0 {
            snapshots.push((snapshot_times[j], state.to_measure()?));
        }
    }
    for step in 1..=grid.n {
        stepper.step(&mut state)?;
        values.push(state.rate);
        for (j, &k) in marks.iter().enumerate() {
            if k == step {
                snapshots.push((snapshot_times[j], state.to_measure()?));
            }
        }
        if step % 1024 == 0 {
            state.check_mass()?;
        }
    }
    state.check_mass()?;
    Ok(FpSolution { rate: RateSolution::new(grid, values), state, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariant::{gamma, stationary_cell_masses, steady_states};
    use crate::measures::l1_distance;
    use crate::volterra::{picard_closure, solve_rate, PicardOptions};
    use crate::Current;

    #[test]
    fn conserves_mass_and_positivity() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.5).unwrap();
        let g = SpatialGrid::new(2.5, 1e-2).unwrap();
        let init = GridMeasure::uniform(0.0, 1.0, g).unwrap();
        let mut st = FPState::new(&m, &init).unwrap();
        for _ in 0..200 {
            st = fp_step(&m, &st, 5e-3).unwrap();
            assert!((st.mass() - 1.0).abs() < 1e-12);
            assert!(st.cells.iter().all(|c| *c >= 0.0));
        }
        assert!(matches!(fp_step(&m, &st, 0.1), Err(Error::StepSize(_))));
    }

    #[test]
    fn linear_gaussian_rate() {
        let m = ModelSpec::affine_power(1.0, 0.0, 1.0, 0.0).unwrap();
        let g = SpatialGrid::new(12.0, 2e-3).unwrap();
        let init = GridMeasure::mollified_origin(MOLLIFY_CELLS, g).unwrap();
        let sol = fp_solve(&m, &init, 15.0, g.dx, 1e-3).unwrap();
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((sol.rate.values.last().unwrap() - target).abs() < 1e-2);
        let vol = solve_rate(&m, &Current::constant(0.0), &init, TimeGrid::span(0.0, 15.0, 1e-2).unwrap()).unwrap();
        let d = sol.rate.restrict(vol.grid).unwrap().sup_distance(&vol).unwrap();
        assert!(d < 1e-2f64.max(5.0 * g.dx), "{d}");
    }

    #[test]
    fn first_order_in_dx() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap();
        let tg = TimeGrid::span(0.0, 4.0, 1e-2).unwrap();
        let err = |dx: f64| {
            let g = SpatialGrid::new(2.0, dx).unwrap();
            let init = GridMeasure::uniform(0.2, 0.8, g).unwrap();
            let vol = solve_rate(&m, &Current::constant(0.0), &init, TimeGrid::span(0.0, 4.0, 1e-3).unwrap()).unwrap();
            let fp = fp_solve(&m, &init, 4.0, dx, dx / 2.0).unwrap();
            fp.rate.restrict(tg).unwrap().sup_distance(&vol.restrict(tg).unwrap()).unwrap()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e2 < 0.7 * e1 && e2 > 0.3 * e1, "{e1} {e2}");
    }

    #[test]
    fn stationary_start_stays_put() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.1).unwrap();
        let rep = steady_states(&m, 5.0, 200).unwrap();
        let a = rep.roots[0].a;
        let g = SpatialGrid::new(2.0, 1e-3).unwrap();
        let cells = stationary_cell_masses(&m, a, g).unwrap();
        assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let st = FPState::from_cell_masses(&m, g, &cells).unwrap();
        let start = st.to_measure().unwrap();
        let sol = fp_run(&m, st, 5.0, 5e-4, &[5.0]).unwrap();
        let d = l1_distance(&sol.snapshots[0].1, &start).unwrap();
        assert!(d < 1e-2, "{d}");
        assert!((sol.rate.values.last().unwrap() - gamma(&m, a).unwrap()).abs() < 1e-2);
    }

    #[test]
    fn matches_picard_small_coupling() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.1).unwrap();
        let g = SpatialGrid::new(2.5, 2e-3).unwrap();
        let init = GridMeasure::mollified_origin(MOLLIFY_CELLS, g).unwrap();
        let tg = TimeGrid::span(0.0, 5.0, 1e-2).unwrap();
        let pic = picard_closure(&m, &init, tg, PicardOptions::default()).unwrap();
        let fp = fp_solve(&m, &init, 5.0, g.dx, 1e-3).unwrap();
        let d = fp.rate.restrict(tg).unwrap().sup_distance(&pic.rate).unwrap();
        assert!(d < 1e-2, "{d}");
    }
}
