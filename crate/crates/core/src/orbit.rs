//! The trajectory `t -> phi_t(0)` at constant current, with its accumulated hazard.

use crate::error::{Error, Result};
use crate::model::{Current, ModelSpec};
use crate::quadrature::gl8;

/// Quadrature node along the orbit: time, position, hazard and weight.
#[derive(Debug, Clone, Copy)]
pub struct OrbitNode {
    pub t: f64,
    pub x: f64,
    pub hazard: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    t: f64,
    x: f64,
    hazard: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OrbitOptions {
    /// Largest panel width.
    pub h_max: f64,
    /// Use exactly `h_max` for every panel.
    pub uniform: bool,
    /// Keep going until `hazard(T) - shift T` exceeds `stop_hazard` (or the orbit has settled).
    pub shift: f64,
    pub stop_hazard: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions { h_max: 0.25, uniform: false, shift: 0.0, stop_hazard: 50.0 }
    }
}

/// Panels of 8-point Gauss–Legendre along the orbit, ending either when survival is negligible or
/// when the position has settled at `sigma_a` (then the tail is exactly exponential).
#[derive(Debug, Clone)]
pub struct Orbit {
    pub a: f64,
    pub nodes: Vec<OrbitNode>,
    panels: Vec<Panel>,
    pub t_end: f64,
    pub x_end: f64,
    pub hazard_end: f64,
    /// `f(phi_T)`, the hazard rate used for the tail.
    pub rate_end: f64,
    pub settled: bool,
    cur: Current,
}

const T_LIMIT: f64 = 1e6;

impl Orbit {
    pub fn new(m: &ModelSpec, a: f64, opts: OrbitOptions) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("current must be >= 0, got {a}")));
        }
        let cur = Current::constant(a);
        let sigma = m.sigma(a);
        let q = gl8();
        let mut orbit = Orbit {
            a,
            nodes: Vec::new(),
            panels: Vec::new(),
            t_end: 0.0,
            x_end: 0.0,
            hazard_end: 0.0,
            rate_end: 0.0,
            settled: false,
            cur: cur.clone(),
        };
        let (mut t, mut x, mut hz) = (0.0f64, 0.0f64, 0.0f64);
        loop {
            let h = if opts.uniform {
                opts.h_max
            } else {
                let ahead = m.f(m.flow(&cur, t, t + opts.h_max, x)).max(m.f(x));
                opts.h_max.min(0.5 / ahead.max(1e-300))
            };
            orbit.panels.push(Panel { t, x, hazard: hz, h });
            for (c, w) in q.nodes.iter().zip(&q.weights) {
                let d = c * h;
                let xq = m.flow(&cur, t, t + d, x);
                let inner = q.integrate(0.0, d, |u| m.f(m.flow(&cur, t, t + u, x)));
                orbit.nodes.push(OrbitNode { t: t + d, x: xq, hazard: hz + inner, w: w * h });
            }
            let inc = q.integrate(0.0, h, |u| m.f(m.flow(&cur, t, t + u, x)));
            x = m.flow(&cur, t, t + h, x);
            hz += inc;
            t += h;
            let settled = sigma.is_finite() && (sigma - x).abs() <= 1e-14 * sigma.max(1.0);
            if settled || (hz - opts.shift * t > opts.stop_hazard && m.f(x) > opts.shift) {
                orbit.settled = settled;
                break;
            }
            if t > T_LIMIT || !hz.is_finite() {
                return Err(Error::Numerical(format!(
                    "survival along the orbit does not decay (a={a}, t={t}, hazard={hz})"
                )));
            }
        }
        orbit.t_end = t;
        orbit.x_end = x;
        orbit.hazard_end = hz;
        orbit.rate_end = m.f(x);
        if !(orbit.rate_end > opts.shift) {
            return Err(Error::Numerical(format!("hazard rate vanishes along the orbit (a={a})")));
        }
        Ok(orbit)
    }

    /// `∫_0^∞ g(t, phi_t, H_t) dt`, with the tail beyond `T` taken at the terminal rate and position.
    pub fn integrate(&self, g: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let body: f64 = self.nodes.iter().map(|n| n.w * g(n.t, n.x, (-n.hazard).exp())).sum();
        body + self.tail(|h| g(self.t_end, self.x_end, h))
    }

    /// Tail contribution `∫_T^∞ g(phi_T) e^{-Lambda_T - f_T (t-T)} dt` for a `g` frozen at `T`.
    pub fn tail(&self, g: impl Fn(f64) -> f64) -> f64 {
        let h = (-self.hazard_end).exp();
        g(h) / self.rate_end
    }

    /// Survival at the end of the orbit.
    pub fn survival_end(&self) -> f64 {
        (-self.hazard_end).exp()
    }

    /// Position and hazard at time `t`.
    pub fn state_at(&self, m: &ModelSpec, t: f64) -> (f64, f64) {
        if t >= self.t_end {
            let x = m.flow(&self.cur, self.t_end, t, self.x_end);
            return (x, self.hazard_end + self.rate_end * (t - self.t_end));
        }
        let k = self.panels.partition_point(|p| p.t <= t).saturating_sub(1);
        let p = self.panels[k];
        let d = t - p.t;
        let x = m.flow(&self.cur, p.t, t, p.x);
        let inner = gl8().integrate(0.0, d, |u| m.f(m.flow(&self.cur, p.t, p.t + u, p.x)));
        (x, p.hazard + inner)
    }

    /// `∫_0^{t_stop} g(t, phi_t, H_t) dt`.
    pub fn integrate_until(&self, m: &ModelSpec, t_stop: f64, g: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let t_stop = t_stop.min(self.t_end);
        let k = self.panels.partition_point(|p| p.t + p.h <= t_stop);
        let full: f64 = self.nodes[..8 * k].iter().map(|n| n.w * g(n.t, n.x, (-n.hazard).exp())).sum();
        if k >= self.panels.len() {
            return full;
        }
        let p = self.panels[k];
        let d = t_stop - p.t;
        if d <= 0.0 {
            return full;
        }
        let q = gl8();
        let part = q.integrate(0.0, d, |u| {
            let x = m.flow(&self.cur, p.t, p.t + u, p.x);
            let inner = q.integrate(0.0, u, |v| m.f(m.flow(&self.cur, p.t, p.t + v, p.x)));
            g(p.t + u, x, (-(p.hazard + inner)).exp())
        });
        full + part
    }

    /// Time at which the orbit reaches `x` (which must lie below `sigma_a`).
    pub fn time_to_reach(&self, m: &ModelSpec, x: f64) -> Option<f64> {
        if x <= 0.0 {
            return Some(0.0);
        }
        let k = self.panels.partition_point(|p| p.x <= x);
        let (lo, hi) = if k == 0 {
            return Some(0.0);
        } else if k >= self.panels.len() {
            if x >= self.x_end {
                return None;
            }
            (self.panels[k - 1].t, self.t_end)
        } else {
            (self.panels[k - 1].t, self.panels[k].t)
        };
        let p = self.panels[k - 1];
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m.flow(&self.cur, p.t, mid, p.x) < x {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1e-300) {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_survival() {
        let m = ModelSpec::affine_power(1.0, 0.0, 1.0, 0.0).unwrap();
        let o = Orbit::new(&m, 0.0, OrbitOptions::default()).unwrap();
        let inv = o.integrate(|_, _, h| h);
        assert!((inv - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-12);
        for n in o.nodes.iter().step_by(37) {
            assert!((n.hazard - 0.5 * n.t * n.t).abs() < 1e-12);
            assert!((n.x - n.t).abs() < 1e-14);
        }
        let (x, hz) = o.state_at(&m, 1.2345);
        assert!((x - 1.2345).abs() < 1e-14 && (hz - 0.5 * 1.2345f64.powi(2)).abs() < 1e-13);
        assert!((o.time_to_reach(&m, 2.5).unwrap() - 2.5).abs() < 1e-12);
        let part = o.integrate_until(&m, 1.0, |_, _, h| h);
        let exact = (std::f64::consts::PI / 2.0).sqrt() * erf_approx(1.0 / 2f64.sqrt());
        assert!((part - exact).abs() < 1e-6);
    }

    fn erf_approx(x: f64) -> f64 {
        // Taylor series, enough terms for |x| < 1
        let mut s = 0.0;
        let mut term = x;
        for n in 0..40 {
            s += term / (2 * n + 1) as f64;
            term *= -x * x / (n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * s
    }

    #[test]
    fn settles_for_confining_drift() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap();
        let o = Orbit::new(&m, 0.5, OrbitOptions::default()).unwrap();
        assert!((o.rate_end - 2.25).abs() < 1e-8);
        let slow = Orbit::new(&ModelSpec::affine_power(0.15, 1.0, 2.0, 0.0).unwrap(), 0.0, OrbitOptions::default()).unwrap();
        assert!(slow.settled);
        assert!(o.t_end < 40.0);
    }
}
