use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid with nodes `t0 + k dt` for `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("grid start must be >= 0, got {t0}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("grid step must be > 0, got {dt}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(TimeGrid { t0, dt, n })
    }

    /// Grid on `[t0, t_end]` with step close to `dt` (the step count is rounded).
    pub fn span(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::InvalidArgument(format!("empty time span [{t0}, {t_end}]")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("grid step must be > 0, got {dt}")));
        }
        let n = ((t_end - t0) / dt).round().max(1.0) as usize;
        TimeGrid::new(t0, (t_end - t0) / n as f64, n)
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.n)
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.t(k)).collect()
    }

    /// Index of the node nearest to `t`, clamped to the grid.
    pub fn nearest(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        k.clamp(0.0, self.n as f64) as usize
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// External current `t -> a_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Current {
    Constant { a: f64 },
    /// `a + c e^{-lambda t}`.
    ExpApproach { a: f64, c: f64, lambda: f64 },
    /// Linear interpolation of `values` on `grid`, constant outside.
    Sampled { grid: TimeGrid, values: Vec<f64> },
}

impl Current {
    pub fn constant(a: f64) -> Self {
        Current::Constant { a }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Current::Constant { a } => {
                if !(a.is_finite() && *a >= 0.0) {
                    return bad(format!("constant current must be >= 0, got {a}"));
                }
            }
            Current::ExpApproach { a, c, lambda } => {
                if !(a.is_finite() && *a >= 0.0 && c.is_finite() && *c >= 0.0) {
                    return bad(format!("current needs a >= 0 and C >= 0, got a={a}, C={c}"));
                }
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return bad(format!("current decay rate must be > 0, got {lambda}"));
                }
            }
            Current::Sampled { grid, values } => {
                if values.len() != grid.len() {
                    return bad(format!(
                        "sampled current has {} values for {} grid nodes",
                        values.len(),
                        grid.len()
                    ));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return bad(format!("sampled current must be finite and >= 0, found {v}"));
                }
            }
        }
        Ok(())
    }

    /// The constant value when the current does not depend on time.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Current::Constant { a } => Some(*a),
            Current::ExpApproach { a, c, .. } if *c == 0.0 => Some(*a),
            _ => None,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Current::Constant { a } => *a,
            Current::ExpApproach { a, c, lambda } => (a + c * (-lambda * t).exp()).max(0.0),
            Current::Sampled { grid, values } => {
                let (k, w) = locate(grid, t);
                if w == 0.0 {
                    values[k]
                } else {
                    values[k] + w * (values[k + 1] - values[k])
                }
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Current::Constant { a } => *a,
            Current::ExpApproach { a, c, .. } => a + c,
            Current::Sampled { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// `∫_s^t e^{-kappa (t-u)} a_u du`, exact for every current kind.
    pub fn exp_integral(&self, kappa: f64, s: f64, t: f64) -> f64 {
        let d = t - s;
        if d <= 0.0 {
            return 0.0;
        }
        match self {
            Current::Constant { a } => a * g1(kappa, d),
            Current::ExpApproach { a, c, lambda } => {
                let mut v = a * g1(kappa, d);
                if *c != 0.0 {
                    let diff = kappa - lambda;
                    let core = if (diff * d).abs() < 1e-3 {
                        (-kappa * d).exp() * d * exprel(diff * d)
                    } else {
                        ((-lambda * d).exp() - (-kappa * d).exp()) / diff
                    };
                    v += c * (-lambda * s).exp() * core;
                }
                v
            }
            Current::Sampled { grid, values } => {
                let mut acc = 0.0;
                let t_lo = grid.t0;
                let t_hi = grid.t_end();
                // constant pieces outside the grid
                if s < t_lo {
                    let e = t.min(t_lo);
                    acc += (-kappa * (t - e)).exp() * values[0] * g1(kappa, e - s);
                }
                if t > t_hi {
                    let b = s.max(t_hi);
                    acc += values[grid.n] * g1(kappa, t - b);
                }
                let a0 = s.max(t_lo);
                let a1 = t.min(t_hi);
                if a1 > a0 {
                    let k0 = (((a0 - t_lo) / grid.dt).floor() as usize).min(grid.n - 1);
                    let mut k = k0;
                    loop {
                        let p0 = grid.t(k).max(a0);
                        let p1 = grid.t(k + 1).min(a1);
                        if p1 > p0 {
                            let slope = (values[k + 1] - values[k]) / grid.dt;
                            let alpha = values[k] + slope * (p0 - grid.t(k));
                            let h = p1 - p0;
                            let piece = alpha * g1(kappa, h) + slope * g2(kappa, h);
                            acc += (-kappa * (t - p1)).exp() * piece;
                        }
                        k += 1;
                        if k >= grid.n || grid.t(k) >= a1 {
                            break;
                        }
                    }
                }
                acc
            }
        }
    }
}

fn locate(grid: &TimeGrid, t: f64) -> (usize, f64) {
    if t <= grid.t0 {
        return (0, 0.0);
    }
    if t >= grid.t_end() {
        return (grid.n, 0.0);
    }
    let u = (t - grid.t0) / grid.dt;
    let k = (u.floor() as usize).min(grid.n - 1);
    (k, u - k as f64)
}

/// `∫_0^h e^{-kappa (h-w)} dw`.
#[inline]
pub(crate) fn g1(kappa: f64, h: f64) -> f64 {
    if kappa == 0.0 {
        h
    } else {
        -(-kappa * h).exp_m1() / kappa
    }
}

/// `∫_0^h e^{-kappa (h-w)} w dw`.
pub(crate) fn g2(kappa: f64, h: f64) -> f64 {
    let x = kappa * h;
    if x.abs() < 0.1 {
        let mut term = 0.5;
        let mut sum = 0.0;
        for k in 0..14 {
            sum += term;
            term *= -x / (k as f64 + 3.0);
        }
        h * h * sum
    } else {
        (h - g1(kappa, h)) / kappa
    }
}

/// `(e^y - 1) / y`.
pub(crate) fn exprel(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 + 0.5 * y
    } else {
        y.exp_m1() / y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    fn brute(cur: &Current, kappa: f64, s: f64, t: f64) -> f64 {
        let q = GaussLegendre::new(10);
        let mut cuts = vec![s];
        cuts.extend((1..40).map(|k| 0.25 * k as f64).filter(|&c| c > s && c < t));
        cuts.push(t);
        cuts.windows(2)
            .map(|w| {
                let h = (w[1] - w[0]) / 20.0;
                (0..20)
                    .map(|i| {
                        let a = w[0] + i as f64 * h;
                        q.integrate(a, a + h, |u| (-kappa * (t - u)).exp() * cur.value(u))
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::span(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.n, 10);
        assert_eq!(g.len(), 11);
        assert!((g.t_end() - 1.0).abs() < 1e-15);
        assert_eq!(g.nearest(0.46), 5);
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
    }

    #[test]
    fn exp_integrals_match_quadrature() {
        let grid = TimeGrid::new(0.0, 0.25, 8).unwrap();
        let values: Vec<f64> = (0..=8).map(|k| 1.0 + (k as f64).sin().abs()).collect();
        let currents = [
            Current::constant(0.7),
            Current::ExpApproach { a: 0.5, c: 0.3, lambda: 0.3 },
            Current::ExpApproach { a: 0.5, c: 0.3, lambda: 1.0 },
            Current::Sampled { grid, values },
        ];
        for cur in &currents {
            for &kappa in &[0.0, 1.0, 2.5] {
                for &(s, t) in &[(0.0, 1.0), (0.3, 1.7), (1.9, 3.2), (0.1, 0.1001)] {
                    let e = cur.exp_integral(kappa, s, t);
                    let b = brute(cur, kappa, s, t);
                    assert!((e - b).abs() < 1e-11 * (1.0 + b), "{cur:?} k={kappa} {s} {t}: {e} vs {b}");
                }
            }
        }
    }

    #[test]
    fn helper_series_agree() {
        for &k in &[1e-6, 0.01, 0.5, 3.0] {
            for &h in &[1e-3, 0.05, 0.2, 1.0] {
                let g = GaussLegendre::new(12);
                let a = g.integrate(0.0, h, |w| (-k * (h - w)).exp() * w);
                assert!((g2(k, h) - a).abs() < 1e-15 + 1e-13 * a);
            }
        }
    }

    #[test]
    fn sampled_value_interpolates() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let c = Current::Sampled { grid, values: vec![0.0, 2.0, 1.0] };
        assert_eq!(c.value(0.5), 1.0);
        assert_eq!(c.value(1.5), 1.5);
        assert_eq!(c.value(5.0), 1.0);
        assert!(c.validate().is_ok());
    }
}
