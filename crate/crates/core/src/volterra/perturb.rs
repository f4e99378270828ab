use serde::Serialize;

use super::{convolve, kernels, resolvent, KernelMatrix, RateSolution};
use crate::error::{Error, Result};
use crate::invariant::gamma;
use crate::measures::GridMeasure;
use crate::model::{Current, ModelSpec, TimeGrid};

#[derive(Debug, Clone, Serialize)]
pub struct Perturbation {
    /// Rate rebuilt from the constant-current resolvent and the perturbation resolvent.
    pub rate: RateSolution,
    pub gamma: f64,
    /// `sup_t ∫ |Δ_K(t, s)| e^{λ (t - s)} ds` on the grid.
    pub alpha_hat: f64,
}

/// Rebuilds the rate under `a + C e^{-λt}` as a perturbation of the constant current `a`.
///
/// With `Kbar = K_(a.) - K_a`, `Hbar = H_(a.) - H_a` and `ξ = r_a - γ(a)`, the perturbation kernel is
/// `Δ_K = Kbar + ξ * Kbar - γ(a) Hbar`; its resolvent `Δ_r` gives `r_(a.) = r_a + Δ_r + Δ_r * r_a`.
pub fn perturbation_reconstruct(m: &ModelSpec, cur: &Current, grid: TimeGrid) -> Result<Perturbation> {
    let (a, lambda) = match cur {
        Current::ExpApproach { a, lambda, .. } => (*a, *lambda),
        _ => return Err(Error::InvalidArgument("perturbation needs an exponentially converging current".into())),
    };
    cur.validate()?;
    let space = crate::measures::SpatialGrid::new(1.0, 0.5)?;
    let origin = GridMeasure::dirac(0.0, space)?;
    let (k_a, h_a) = kernels(m, &Current::constant(a), &origin, grid)?;
    let (k_c, h_c) = kernels(m, cur, &origin, grid)?;
    let r_a = resolvent(&k_a)?;
    let g = gamma(m, a)?;
    let n = grid.len();
    let xi = KernelMatrix::toeplitz(grid, (0..n).map(|i| r_a.get(i, 0) - g).collect())?;
    let kbar = KernelMatrix::from_fn(grid, |i, j| k_c.get(i, j) - k_a.get(i, j));
    let xk = convolve(&xi, &kbar)?;
    let dk = KernelMatrix::from_fn(grid, |i, j| kbar.get(i, j) + xk.get(i, j) - g * (h_c.get(i, j) - h_a.get(i, j)));
    let dr = resolvent(&dk)?;
    let dt = grid.dt;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let mut conv = 0.0;
            if i > 0 {
                conv = 0.5 * (dr.get(i, 0) * r_a.get(0, 0) + dr.get(i, i) * r_a.get(i, 0));
                for k in 1..i {
                    conv += dr.get(i, k) * r_a.get(k, 0);
                }
                conv *= dt;
            }
            r_a.get(i, 0) + dr.get(i, 0) + conv
        })
        .collect();
    let alpha_hat = (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| {
                    let w = if j == 0 || j == i { 0.5 * dt } else { dt };
                    w * dk.get(i, j).abs() * (lambda * (grid.t(i) - grid.t(j))).exp()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let mut rate = RateSolution::new(grid, values);
    rate.current = Some(cur.clone());
    Ok(Perturbation { rate, gamma: g, alpha_hat })
}
