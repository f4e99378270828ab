//! Laplace transforms of the renewal kernels, their zeros and the exponential convergence rate.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::orbit::{Orbit, OrbitOptions};
use crate::quadrature::gl8;
use crate::volterra::RateSolution;

/// Default distance kept from the abscissa `-f(sigma_a)`.
pub const DEFAULT_MARGIN: f64 = 0.01;
/// Sweep used when `sigma_a` is infinite.
pub const DEFAULT_FLOORS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Tabulated `H_a` and `K_a` on uniform Gauss–Legendre panels, for fast transforms.
#[derive(Debug, Clone)]
pub struct LaplaceTable {
    pub a: f64,
    /// Transforms are available for `Re z > -shift`.
    pub shift: f64,
    h: f64,
    /// Per panel, per node: `w H`, `w K`.
    wh: Vec<[f64; 8]>,
    wk: Vec<[f64; 8]>,
    t_end: f64,
    hz_end: f64,
    rate_end: f64,
    /// `f(sigma_a)` (infinite when the orbit never settles).
    pub f_sigma: f64,
    // node times, hazards and rates for the cone bound
    t_nodes: Vec<f64>,
    hz_nodes: Vec<f64>,
    f_nodes: Vec<f64>,
}

impl LaplaceTable {
    /// Table valid for `Re z > -shift` and `|Im z|` up to about `im_max`.
    pub fn new(m: &ModelSpec, a: f64, shift: f64, im_max: f64) -> Result<Self> {
        let sigma = m.sigma(a);
        let f_sigma = if sigma.is_finite() { m.f(sigma) } else { f64::INFINITY };
        if !(shift >= 0.0 && shift < f_sigma) {
            return Err(Error::InvalidArgument(format!("shift {shift} must lie in [0, f(sigma_a) = {f_sigma})")));
        }
        let h = (0.05f64).min(2.5 / im_max.max(1.0));
        let opts = OrbitOptions { h_max: h, uniform: true, shift, stop_hazard: 40.0 };
        let orbit = Orbit::new(m, a, opts)?;
        // weights carry e^{shift t} so that transforms only ever need e^{-(z + shift) t}
        let mut wh = Vec::with_capacity(orbit.nodes.len() / 8);
        let mut wk = Vec::with_capacity(orbit.nodes.len() / 8);
        for chunk in orbit.nodes.chunks(8) {
            let mut ph = [0.0; 8];
            let mut pk = [0.0; 8];
            for (q, n) in chunk.iter().enumerate() {
                let s = (shift * n.t - n.hazard).exp();
                ph[q] = n.w * s;
                pk[q] = n.w * s * m.f(n.x);
            }
            wh.push(ph);
            wk.push(pk);
        }
        let t_nodes = orbit.nodes.iter().map(|n| n.t).collect();
        let hz_nodes = orbit.nodes.iter().map(|n| n.hazard).collect();
        let f_nodes = orbit.nodes.iter().map(|n| m.f(n.x)).collect();
        Ok(LaplaceTable {
            a,
            shift,
            h,
            wh,
            wk,
            t_end: orbit.t_end,
            hz_end: orbit.hazard_end,
            rate_end: orbit.rate_end,
            f_sigma,
            t_nodes,
            hz_nodes,
            f_nodes,
        })
    }

    fn check(&self, z: C64) -> Result<()> {
        if !(z.re > -self.shift - 1e-12) || !z.is_finite() {
            return Err(Error::InvalidArgument(format!("Re z = {} is left of the admissible half-plane", z.re)));
        }
        Ok(())
    }

    /// `Ĥ` alone, the hot path of contour integration.
    fn eval_h(&self, z: C64) -> C64 {
        let q = gl8();
        let zs = z + self.shift;
        let mut nf = [C64::new(0.0, 0.0); 8];
        for (k, c) in q.nodes.iter().enumerate() {
            nf[k] = (-zs * (c * self.h)).exp();
        }
        let step = (-zs * self.h).exp();
        let mut e = C64::new(1.0, 0.0);
        let mut sh = C64::new(0.0, 0.0);
        for ph in &self.wh {
            let mut re = 0.0;
            let mut im = 0.0;
            for k in 0..8 {
                re += nf[k].re * ph[k];
                im += nf[k].im * ph[k];
            }
            sh += e * C64::new(re, im);
            e *= step;
        }
        sh + self.tail_factor(zs) / (z + self.rate_end)
    }

    /// `e^{-z T} H(T)` with `zs = z + shift`.
    fn tail_factor(&self, zs: C64) -> C64 {
        (-zs * self.t_end + (self.shift * self.t_end - self.hz_end)).exp()
    }

    /// `(Ĥ, Ĥ', K̂)` at `z`.
    fn eval(&self, z: C64) -> (C64, C64, C64) {
        let q = gl8();
        let zs = z + self.shift;
        let mut nf = [C64::new(0.0, 0.0); 8];
        for (k, c) in q.nodes.iter().enumerate() {
            nf[k] = (-zs * (c * self.h)).exp();
        }
        let step = (-zs * self.h).exp();
        let mut e = C64::new(1.0, 0.0);
        let (mut sh, mut sd, mut sk) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for (p, (ph, pk)) in self.wh.iter().zip(&self.wk).enumerate() {
            let t0 = p as f64 * self.h;
            let (mut ah, mut ad, mut ak) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for k in 0..8 {
                let t = t0 + q.nodes[k] * self.h;
                ah += nf[k] * ph[k];
                ad += nf[k] * (ph[k] * t);
                ak += nf[k] * pk[k];
            }
            sh += e * ah;
            sd += e * ad;
            sk += e * ak;
            e *= step;
        }
        // tail at the terminal hazard rate
        let et = self.tail_factor(zs);
        let den = z + self.rate_end;
        sh += et / den;
        sd -= et * (self.t_end / den + 1.0 / (den * den));
        sk += et * self.rate_end / den;
        (sh, -sd, sk)
    }

    pub fn h_hat(&self, z: C64) -> Result<C64> {
        self.check(z)?;
        Ok(self.eval(z).0)
    }

    pub fn h_hat_prime(&self, z: C64) -> Result<C64> {
        self.check(z)?;
        Ok(self.eval(z).1)
    }

    pub fn k_hat(&self, z: C64) -> Result<C64> {
        self.check(z)?;
        Ok(self.eval(z).2)
    }

    /// Total variation of `t -> e^{-x t} K_a(t)` on `[0, ∞)`.
    pub fn cone_bound(&self, x: f64) -> Result<f64> {
        if !(x > -self.shift - 1e-12) {
            return Err(Error::InvalidArgument(format!("cone bound needs x > {}", -self.shift)));
        }
        let mut prev = 0.0;
        let mut tv = 0.0;
        for ((t, hz), f) in self.t_nodes.iter().zip(&self.hz_nodes).zip(&self.f_nodes) {
            let g = f * (-x * t - hz).exp();
            tv += (g - prev).abs();
            prev = g;
        }
        let g_end = self.rate_end * (-x * self.t_end - self.hz_end).exp();
        tv += (g_end - prev).abs() + g_end;
        Ok(tv)
    }
}

fn margin_shift(m: &ModelSpec, a: f64, re: f64) -> f64 {
    let sigma = m.sigma(a);
    if sigma.is_finite() {
        (-re).max(0.0).min(m.f(sigma) - DEFAULT_MARGIN)
    } else {
        (-re).max(0.0)
    }
}

/// `Ĥ_a(z) = ∫_0^∞ e^{-zt} H_a(t) dt`.
pub fn laplace_h(m: &ModelSpec, a: f64, z: C64) -> Result<C64> {
    admissible(m, a, z.re)?;
    LaplaceTable::new(m, a, margin_shift(m, a, z.re), z.im.abs())?.h_hat(z)
}

/// `K̂_a(z) = ∫_0^∞ e^{-zt} K_a(t) dt`.
pub fn laplace_k(m: &ModelSpec, a: f64, z: C64) -> Result<C64> {
    admissible(m, a, z.re)?;
    LaplaceTable::new(m, a, margin_shift(m, a, z.re), z.im.abs())?.k_hat(z)
}

/// `‖d/dt (e^{-xt} K_a(t))‖_1`.
pub fn cone_bound(m: &ModelSpec, a: f64, x: f64) -> Result<f64> {
    admissible(m, a, x)?;
    LaplaceTable::new(m, a, margin_shift(m, a, x), 1.0)?.cone_bound(x)
}

fn admissible(m: &ModelSpec, a: f64, re: f64) -> Result<()> {
    let sigma = m.sigma(a);
    if sigma.is_finite() && !(re > -m.f(sigma) + DEFAULT_MARGIN - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "Re z = {re} is not right of -f(sigma_a) + margin = {}",
            -m.f(sigma) + DEFAULT_MARGIN
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Zero {
    pub re: f64,
    pub im: f64,
    /// `|Ĥ_a(z)|` at the polished zero.
    pub residual: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub a: f64,
    pub lambda_star: f64,
    pub zeros: Vec<Zero>,
    #[serde(rename = "box")]
    pub search_box: SearchBox,
    pub cone_bound: f64,
    /// Winding number of `Ĥ_a` around the search box.
    pub winding: i64,
    /// `lambda_star` is exact (a zero was found, or the strip was searched up to `-f(sigma_a)`).
    pub conclusive: bool,
    /// No zero found and the strip extends further left: `lambda_star` is only a lower bound.
    pub lower_bound: bool,
    pub f_sigma: f64,
}

const EDGE_POINTS: usize = 2000;

struct Search<'a> {
    table: &'a LaplaceTable,
    scale: f64,
}

impl Search<'_> {
    fn h(&self, z: C64) -> C64 {
        self.table.eval_h(z)
    }

    /// Change of argument along a segment, refined where the phase moves fast.
    fn edge(&self, a: C64, b: C64, n: usize) -> Option<f64> {
        let pts: Vec<C64> = (0..=n).map(|k| a + (b - a) * (k as f64 / n as f64)).collect();
        let vals: Vec<C64> = pts.par_iter().map(|&z| self.h(z)).collect();
        let mut total = 0.0;
        for k in 0..n {
            total += self.segment(pts[k], pts[k + 1], vals[k], vals[k + 1], 0)?;
        }
        Some(total)
    }

    fn segment(&self, za: C64, zb: C64, ha: C64, hb: C64, depth: usize) -> Option<f64> {
        if ha.norm() < 1e-8 * self.scale || hb.norm() < 1e-8 * self.scale {
            return None;
        }
        let d = (hb / ha).arg();
        if d.abs() < 0.3 || depth > 30 {
            return Some(d);
        }
        let zm = 0.5 * (za + zb);
        let hm = self.h(zm);
        Some(self.segment(za, zm, ha, hm, depth + 1)? + self.segment(zm, zb, hm, hb, depth + 1)?)
    }

    fn winding(&self, re0: f64, re1: f64, im0: f64, im1: f64, n: usize) -> Option<i64> {
        let c = [C64::new(re0, im0), C64::new(re1, im0), C64::new(re1, im1), C64::new(re0, im1)];
        let mut total = 0.0;
        for k in 0..4 {
            total += self.edge(c[k], c[(k + 1) % 4], n)?;
        }
        let w = total / std::f64::consts::TAU;
        if (w - w.round()).abs() > 0.1 {
            return None;
        }
        Some(w.round() as i64)
    }

    /// Winding number, with a small perturbation of the rectangle when the contour grazes a zero
    /// and doubling of the edge sampling until two counts agree.
    fn robust_winding(&self, r: [f64; 4], n: usize, confirm: bool) -> Result<([f64; 4], i64)> {
        let w = r[1] - r[0];
        for attempt in 0..8 {
            let eps = attempt as f64 * 1e-4 * w.max(1e-3);
            let rr = [r[0] - eps, r[1] + 0.5 * eps * (attempt % 2) as f64, r[2] - eps, r[3] + 0.7 * eps];
            let mut last = None;
            let mut ok = None;
            let mut pts = n;
            for _ in 0..4 {
                match self.winding(rr[0], rr[1], rr[2], rr[3], pts) {
                    Some(v) if !confirm || last == Some(v) => {
                        ok = Some(v);
                        break;
                    }
                    Some(v) => last = Some(v),
                    None => break,
                }
                pts *= 2;
            }
            if let Some(v) = ok {
                return Ok((rr, v));
            }
        }
        Err(Error::Numerical("contour keeps passing through a zero of the transform".into()))
    }

    fn newton(&self, z0: C64) -> Option<C64> {
        let mut z = z0;
        for _ in 0..60 {
            let (h, dh, _) = self.table.eval(z);
            if dh.norm() == 0.0 {
                return None;
            }
            let step = h / dh;
            z -= step;
            if !z.is_finite() || z.re < -self.table.shift {
                return None;
            }
            if step.norm() < 1e-13 * (1.0 + z.norm()) {
                return Some(z);
            }
        }
        None
    }

    fn locate(&self, r: [f64; 4], count: i64, out: &mut Vec<(C64, usize)>) -> Result<()> {
        if count <= 0 {
            return Ok(());
        }
        let (w, h) = (r[1] - r[0], r[3] - r[2]);
        let centre = C64::new(0.5 * (r[0] + r[1]), 0.5 * (r[2] + r[3]));
        if count == 1 || w.max(h) < 1e-6 {
            if let Some(z) = self.newton(centre) {
                let pad = 1e-9 * (1.0 + z.norm());
                if z.re >= r[0] - pad && z.re <= r[1] + pad && z.im >= r[2] - pad && z.im <= r[3] + pad {
                    out.push((z, count as usize));
                    return Ok(());
                }
            }
            if w.max(h) < 1e-6 {
                out.push((centre, count as usize));
                return Ok(());
            }
        }
        let halves = if w >= h {
            let mid = r[0] + 0.5 * w;
            [[r[0], mid, r[2], r[3]], [mid, r[1], r[2], r[3]]]
        } else {
            let mid = r[2] + 0.5 * h;
            [[r[0], r[1], r[2], mid], [r[0], r[1], mid, r[3]]]
        };
        let mut pts = 128;
        let (first, c1, second, c2) = loop {
            let (first, c1) = self.robust_winding(halves[0], pts, false)?;
            // the second half shares the perturbed edge with the first
            let mut second = halves[1];
            if w >= h {
                second[0] = first[1];
            } else {
                second[2] = first[3];
            }
            let (second, c2) = self.robust_winding(second, pts, false)?;
            if c1 + c2 == count {
                break (first, c1, second, c2);
            }
            if pts > 1 << 14 {
                return Err(Error::Numerical(format!("zero count {count} does not split as {c1} + {c2}")));
            }
            pts *= 4;
        };
        self.locate(first, c1, out)?;
        self.locate(second, c2, out)?;
        Ok(())
    }
}

/// Zeros of `Ĥ_a` in `[-sigma_floor, 0] × [-Y, Y]` with `Y` the cone bound at `-sigma_floor`.
pub fn lambda_star(m: &ModelSpec, a: f64, sigma_floor: f64) -> Result<SpectralReport> {
    let sigma = m.sigma(a);
    let f_sigma = if sigma.is_finite() { m.f(sigma) } else { f64::INFINITY };
    if !(sigma_floor > 0.0 && sigma_floor < f_sigma) {
        return Err(Error::InvalidArgument(format!("sigma_floor must lie in (0, f(sigma_a) = {f_sigma})")));
    }
    let probe = LaplaceTable::new(m, a, sigma_floor, 1.0)?;
    let cone = probe.cone_bound(-sigma_floor)?;
    let y = 1.05 * cone + 0.5;
    let table = LaplaceTable::new(m, a, sigma_floor, y)?;
    let scale = table.eval(C64::new(0.0, 0.0)).0.norm();
    let search = Search { table: &table, scale };
    let (rect, winding) = search.robust_winding([-sigma_floor, 0.0, -y, y], EDGE_POINTS, true)?;
    let mut found = Vec::new();
    search.locate(rect, winding, &mut found)?;
    let mut zeros: Vec<Zero> = found
        .into_iter()
        .map(|(z, mult)| Zero { re: z.re, im: z.im, residual: table.eval(z).0.norm(), multiplicity: mult })
        .collect();
    zeros.sort_by(|p, q| q.re.partial_cmp(&p.re).unwrap().then(p.im.partial_cmp(&q.im).unwrap()));
    let searched_all = sigma.is_finite() && sigma_floor >= f_sigma - DEFAULT_MARGIN - 1e-12;
    let (lambda, conclusive, lower) = match zeros.first() {
        Some(z) => (-z.re, true, false),
        None if searched_all => (f_sigma, true, false),
        None => (sigma_floor, false, true),
    };
    Ok(SpectralReport {
        a,
        lambda_star: lambda,
        zeros,
        search_box: SearchBox { re_min: rect[0], re_max: rect[1], im_max: rect[3] },
        cone_bound: cone,
        winding,
        conclusive,
        lower_bound: lower,
        f_sigma,
    })
}

/// Largest cone bound for which a contour search is attempted.
pub const CONE_MAX: f64 = 2000.0;

/// Searches the strip up to `-f(sigma_a) + margin` when it is finite, otherwise sweeps `floors`
/// leftwards and stops at the first depth where a zero appears. Depths whose cone bound exceeds
/// [`CONE_MAX`] are pulled back to the deepest admissible one.
pub fn lambda_star_auto(m: &ModelSpec, a: f64, floors: &[f64]) -> Result<SpectralReport> {
    let sigma = m.sigma(a);
    let depths: Vec<f64> = if sigma.is_finite() { vec![m.f(sigma) - DEFAULT_MARGIN] } else { floors.to_vec() };
    let mut last = None;
    for floor in depths {
        let floor = capped_floor(m, a, floor)?;
        let rep = lambda_star(m, a, floor)?;
        if !rep.zeros.is_empty() || rep.conclusive {
            return Ok(rep);
        }
        last = Some(rep);
    }
    last.ok_or_else(|| Error::InvalidArgument("empty sigma_floor sweep".into()))
}

fn cone_at(m: &ModelSpec, a: f64, floor: f64) -> Result<f64> {
    LaplaceTable::new(m, a, floor, 1.0)?.cone_bound(-floor)
}

/// `floor`, or the deepest smaller depth whose cone bound stays below [`CONE_MAX`].
fn capped_floor(m: &ModelSpec, a: f64, floor: f64) -> Result<f64> {
    let c = cone_at(m, a, floor)?;
    if c.is_finite() && c <= CONE_MAX {
        return Ok(floor);
    }
    let (mut lo, mut hi) = (0.0, floor);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let c = cone_at(m, a, mid)?;
        if c.is_finite() && c <= CONE_MAX {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::Numerical("cone bound exceeds the search limit on the imaginary axis".into()));
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub lambda_hat: f64,
    pub r2: f64,
    /// `r - gamma` changes sign in the window; the fit then uses the envelope maxima.
    pub oscillatory: bool,
    pub samples: usize,
}

/// Least-squares slope of `log |r(t) - gamma|` over `[t1, t2]`.
pub fn fit_decay_rate(rate: &RateSolution, gamma_target: f64, window: (f64, f64)) -> Result<DecayFit> {
    let g = rate.grid;
    let (i0, i1) = (g.nearest(window.0), g.nearest(window.1));
    if i1 < i0 + 9 {
        return Err(Error::InvalidArgument(format!("window {window:?} holds fewer than 10 samples")));
    }
    let e: Vec<(f64, f64)> = (i0..=i1).map(|k| (g.t(k), rate.values[k] - gamma_target)).collect();
    let signs: Vec<bool> = e.iter().filter(|(_, v)| v.abs() > 1e-14).map(|(_, v)| *v > 0.0).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    let oscillatory = changes >= 2;
    let pts: Vec<(f64, f64)> = if oscillatory {
        (1..e.len() - 1)
            .filter(|&k| e[k].1.abs() >= e[k - 1].1.abs() && e[k].1.abs() > e[k + 1].1.abs())
            .map(|k| (e[k].0, e[k].1.abs().ln()))
            .collect()
    } else {
        e.iter().filter(|(_, v)| *v != 0.0).map(|(t, v)| (*t, v.abs().ln())).collect()
    };
    if pts.len() < 3 {
        return Err(Error::InvalidArgument("too few usable points in the decay window".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(DecayFit { lambda_hat: -slope, r2, oscillatory, samples: pts.len() })
}

/// Window `[t1, t2]` from the last time `|r - gamma|` exceeds `hi` to the last time it reaches `lo`.
pub fn decay_window(rate: &RateSolution, gamma_target: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let err = |k: usize| (rate.values[k] - gamma_target).abs();
    let n = rate.values.len();
    let start = (0..n).rev().find(|&k| err(k) > hi).map_or(0, |k| k + 1);
    let end = (0..n).rev().find(|&k| err(k) >= lo)?;
    (end > start).then(|| (rate.grid.t(start), rate.grid.t(end)))
}
