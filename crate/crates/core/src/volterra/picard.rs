use serde::Serialize;

use super::march::{step_current, Marcher};
use super::RateSolution;
use crate::error::{Error, Result};
use crate::measures::GridMeasure;
use crate::model::{Current, ModelSpec, TimeGrid};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardOptions {
    /// Stop when `sup |a^{n+1} - a^n| <= tol` on the window.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation `θ` in `a <- θ Φ(a) + (1 - θ) a`.
    pub relaxation: f64,
    /// Steps per window; `usize::MAX` iterates on the whole horizon at once.
    pub window: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-10, max_iter: 200, relaxation: 1.0, window: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardResult {
    /// The fixed point `a = J r`, sampled on the grid.
    pub current: Current,
    pub rate: RateSolution,
    /// Largest iteration count over the windows.
    pub iterations: usize,
    /// Total number of window sweeps.
    pub sweeps: usize,
    pub residual: f64,
    /// `J nu(f)` exceeded the a-priori bound.
    pub above_bound: bool,
}

/// Fixed point of `a -> J r^nu_(a.)`, i.e. the nonlinear jump rate.
///
/// The horizon is split into windows of `opts.window` steps; on each window the current is
/// iterated to convergence with the past frozen, which is the same fixed point as global
/// iteration but converges in a few sweeps per window.
pub fn picard_closure(m: &ModelSpec, nu: &GridMeasure, grid: TimeGrid, opts: PicardOptions) -> Result<PicardResult> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 || !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidArgument(format!("bad Picard options {opts:?}")));
    }
    let j = m.coupling;
    let n = grid.len();
    let window = opts.window.max(1);
    let mut mr = Marcher::new(m, grid).with_measure(nu);
    let mut r = vec![0.0; n];
    let mut a = vec![0.0; n];
    r[0] = mr.forcing().0;
    a[0] = j * r[0];
    let above_bound = m.a_bar(0.0, 1e12).map(|ab| a[0] > ab).unwrap_or(false);
    mr.push_column();
    let (mut iterations, mut sweeps, mut residual) = (0usize, 0usize, 0.0f64);
    let mut i0 = 0;
    while i0 + 1 < n {
        let i1 = (i0.saturating_add(window)).min(n - 1);
        let slope = if i0 > 0 { a[i0] - a[i0 - 1] } else { 0.0 };
        for k in i0 + 1..=i1 {
            a[k] = (a[i0] + slope * (k - i0) as f64).max(0.0);
        }
        let snap = mr.snapshot();
        let mut it = 0;
        loop {
            it += 1;
            sweeps += 1;
            if it > 1 {
                mr.restore(&snap);
            }
            let mut res = 0.0f64;
            let mut next = Vec::with_capacity(i1 - i0);
            for k in i0..i1 {
                mr.advance(&step_current(&grid, k, a[k], a[k + 1]));
                r[k + 1] = mr.forcing().0 + mr.column_sum(&r);
                mr.push_column();
                let target = j * r[k + 1];
                res = res.max((target - a[k + 1]).abs());
                next.push(target);
            }
            if !res.is_finite() {
                return Err(Error::NonFinite(format!("Picard iterate near t = {}", grid.t(i1))));
            }
            if res <= opts.tol {
                residual = residual.max(res);
                break;
            }
            if it >= opts.max_iter {
                return Err(Error::NotConverged { iterations: it, residual: res });
            }
            for (k, v) in (i0 + 1..=i1).zip(next) {
                a[k] = opts.relaxation * v + (1.0 - opts.relaxation) * a[k];
            }
        }
        iterations = iterations.max(it);
        i0 = i1;
    }
    let current = Current::Sampled { grid, values: a };
    let mut rate = RateSolution::new(grid, r);
    rate.current = Some(current.clone());
    rate.origin = Some(nu.clone());
    Ok(PicardResult { current, rate, iterations, sweeps, residual, above_bound })
}
