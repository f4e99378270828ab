//! Drift, rate function, coupling and the quantities derived from them.

mod current;
mod flow;

pub use current::{Current, TimeGrid};
pub(crate) use current::g1;
pub use flow::flow_at;
pub(crate) use flow::StepMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TABLE_TOL: f64 = 1e-10;

/// Piecewise-linear function sampled on an increasing grid starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Table {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::InvalidModel(format!(
                "table needs matching samples (at least 2), got {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x[0] != 0.0 {
            return Err(Error::InvalidModel("table grid must start at 0".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel("table grid must be strictly increasing".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("table".into()));
        }
        Ok(Table { x, y })
    }

    fn segment(&self, x: f64) -> usize {
        match self.x.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.x.len() - 2),
        }
    }

    pub(crate) fn slope(&self, k: usize) -> f64 {
        (self.y[k + 1] - self.y[k]) / (self.x[k + 1] - self.x[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    /// `b(x) = mu - kappa x`.
    Affine { mu: f64, kappa: f64 },
    /// Linear interpolation, constant beyond the last sample.
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFn {
    /// `f(x) = x^p`.
    Power { p: f64 },
    /// Linear interpolation, extended linearly beyond the last sample.
    Tabulated(Table),
}

/// Drift, rate function and coupling strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub drift: Drift,
    pub rate: RateFn,
    pub coupling: f64,
    /// Step of the numerical integrator used for non-affine drifts.
    pub dt_flow: f64,
    #[serde(skip)]
    p_int: Option<i32>,
}

impl ModelSpec {
    pub fn new(drift: Drift, rate: RateFn, coupling: f64) -> Result<Self> {
        let p_int = match &rate {
            RateFn::Power { p } if p.fract() == 0.0 && *p <= 64.0 => Some(*p as i32),
            _ => None,
        };
        let m = ModelSpec { drift, rate, coupling, dt_flow: 1e-3, p_int };
        m.validate()?;
        Ok(m)
    }

    /// Affine drift with a power rate, the family used by all worked examples.
    pub fn affine_power(mu: f64, kappa: f64, p: f64, coupling: f64) -> Result<Self> {
        ModelSpec::new(Drift::Affine { mu, kappa }, RateFn::Power { p }, coupling)
    }

    pub fn with_coupling(&self, coupling: f64) -> Result<Self> {
        let mut m = self.clone();
        m.coupling = coupling;
        m.validate()?;
        Ok(m)
    }

    pub fn with_dt_flow(mut self, dt_flow: f64) -> Result<Self> {
        if !(dt_flow > 0.0 && dt_flow.is_finite()) {
            return Err(Error::InvalidModel(format!("dt_flow must be > 0, got {dt_flow}")));
        }
        self.dt_flow = dt_flow;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.coupling.is_finite() && self.coupling >= 0.0) {
            return Err(Error::InvalidModel(format!("coupling J must be >= 0, got {}", self.coupling)));
        }
        match &self.drift {
            Drift::Affine { mu, kappa } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::InvalidModel(format!("drift needs mu > 0, got {mu}")));
                }
                if !(kappa.is_finite() && *kappa >= 0.0) {
                    return Err(Error::InvalidModel(format!("drift needs kappa >= 0, got {kappa}")));
                }
            }
            Drift::Tabulated(t) => {
                Table::new(t.x.clone(), t.y.clone())?;
                if !(t.y[0] > 0.0) {
                    return Err(Error::InvalidModel("drift must be positive at 0".into()));
                }
            }
        }
        match &self.rate {
            RateFn::Power { p } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::InvalidModel(format!("rate exponent must be >= 1, got {p}")));
                }
            }
            RateFn::Tabulated(t) => {
                Table::new(t.x.clone(), t.y.clone())?;
                if t.y[0].abs() > TABLE_TOL {
                    return Err(Error::InvalidModel("rate must vanish at 0".into()));
                }
                let n = t.x.len();
                let mut prev = f64::NEG_INFINITY;
                for k in 0..n - 1 {
                    let s = t.slope(k);
                    if s < -TABLE_TOL {
                        return Err(Error::InvalidModel(format!("rate decreases on segment {k}")));
                    }
                    if s < prev - TABLE_TOL {
                        return Err(Error::InvalidModel(format!("rate is not convex at sample {k}")));
                    }
                    prev = s;
                }
            }
        }
        Ok(())
    }

    /// Drift `b(x)`.
    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        match &self.drift {
            Drift::Affine { mu, kappa } => mu - kappa * x,
            Drift::Tabulated(t) => {
                if x >= *t.x.last().unwrap() {
                    *t.y.last().unwrap()
                } else {
                    let k = t.segment(x);
                    t.y[k] + t.slope(k) * (x - t.x[k])
                }
            }
        }
    }

    /// Rate function `f(x)`.
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        if let Some(p) = self.p_int {
            return x.powi(p);
        }
        match &self.rate {
            RateFn::Power { p } => x.powf(*p),
            RateFn::Tabulated(t) => {
                let k = t.segment(x);
                (t.y[k] + t.slope(k) * (x - t.x[k])).max(0.0)
            }
        }
    }

    /// Right derivative of `f`.
    pub fn f_prime(&self, x: f64) -> f64 {
        match &self.rate {
            RateFn::Power { p } => {
                if *p == 1.0 {
                    1.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            RateFn::Tabulated(t) => t.slope(t.segment(x)),
        }
    }

    /// Affine coefficients `(mu, kappa)` when the drift is affine.
    pub fn affine(&self) -> Option<(f64, f64)> {
        match self.drift {
            Drift::Affine { mu, kappa } => Some((mu, kappa)),
            _ => None,
        }
    }

    /// `sup_x b(x)`.
    pub fn c_b(&self) -> f64 {
        match &self.drift {
            Drift::Affine { mu, .. } => *mu,
            Drift::Tabulated(t) => t.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Lipschitz constant of the flow with respect to the current; only certified for affine drifts.
    pub fn c_phi(&self) -> Option<f64> {
        self.affine().map(|_| 1.0)
    }

    /// First zero of `b + a`, or infinity.
    pub fn sigma(&self, a: f64) -> f64 {
        match &self.drift {
            Drift::Affine { mu, kappa } => {
                if *kappa == 0.0 {
                    f64::INFINITY
                } else {
                    (mu + a) / kappa
                }
            }
            Drift::Tabulated(t) => {
                for k in 0..t.x.len() - 1 {
                    let (y0, y1) = (t.y[k] + a, t.y[k + 1] + a);
                    if y0 > 0.0 && y1 <= 0.0 {
                        let (mut lo, mut hi) = (t.x[k], t.x[k + 1]);
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            if self.b(mid) + a > 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        return hi;
                    }
                }
                f64::INFINITY
            }
        }
    }

    /// `psi(theta) = sup_x { theta f'(x) - f(x)^2 / 2 }`.
    pub fn psi(&self, theta: f64) -> f64 {
        match &self.rate {
            RateFn::Power { p } => {
                if *p == 1.0 {
                    theta
                } else {
                    let q = 2.0 * p / (p + 1.0);
                    0.5 * theta.powf(q) * (p - 1.0).powf((p - 1.0) / (p + 1.0)) * (1.0 + p)
                }
            }
            RateFn::Tabulated(t) => {
                let mut best = 0.0f64;
                for k in 0..t.x.len() - 1 {
                    best = best.max(theta * t.slope(k) - 0.5 * t.y[k] * t.y[k]);
                }
                best
            }
        }
    }

    /// `sup_x { J f'(x) - f(x) / 8 }`.
    pub fn beta(&self) -> f64 {
        let j = self.coupling;
        match &self.rate {
            RateFn::Power { p } => {
                if *p == 1.0 {
                    j
                } else {
                    j * (8.0 * j * (p - 1.0)).powf(p - 1.0)
                }
            }
            RateFn::Tabulated(t) => {
                let mut best = 0.0f64;
                for k in 0..t.x.len() - 1 {
                    best = best.max(j * t.slope(k) - t.y[k] / 8.0);
                }
                best
            }
        }
    }

    /// A-priori bound on the jump rate.
    pub fn r_bar(&self) -> f64 {
        let beta = self.beta();
        (self.psi(2.0 * self.c_b()) + 4.0 * beta * beta).sqrt()
    }

    /// Smallest `a >= kappa_floor` with `J sqrt(2 psi(a + C_b)) <= a`.
    pub fn a_bar(&self, kappa_floor: f64, a_max: f64) -> Result<f64> {
        if !(kappa_floor >= 0.0 && a_max > kappa_floor) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= kappa_floor < a_max, got {kappa_floor}, {a_max}"
            )));
        }
        let cb = self.c_b();
        let g = |a: f64| a - self.coupling * (2.0 * self.psi(a + cb)).sqrt();
        if g(kappa_floor) >= 0.0 {
            return Ok(kappa_floor);
        }
        let mut lo = kappa_floor;
        let mut step = (1e-3f64).max(kappa_floor * 1e-3);
        let mut hi = lo + step;
        loop {
            if hi >= a_max {
                hi = a_max;
                if g(hi) < 0.0 {
                    return Err(Error::Bracket {
                        a_max,
                        reason: "J sqrt(2 psi(a + C_b)) stays above a; sublinearity not verified".into(),
                    });
                }
                break;
            }
            if g(hi) >= 0.0 {
                break;
            }
            lo = hi;
            step *= 1.5;
            hi = lo + step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        Ok(hi)
    }
}

/// Free-function form of [`ModelSpec::sigma`].
pub fn sigma_a(m: &ModelSpec, a: f64) -> f64 {
    m.sigma(a)
}

/// Free-function form of [`ModelSpec::psi`].
pub fn psi(m: &ModelSpec, theta: f64) -> f64 {
    m.psi(theta)
}

/// Free-function form of [`ModelSpec::a_bar`] with the default `a_max = 1e6`.
pub fn a_bar(m: &ModelSpec, kappa_floor: f64) -> Result<f64> {
    m.a_bar(kappa_floor, 1e6)
}

/// Free-function form of [`ModelSpec::r_bar`].
pub fn r_bar(m: &ModelSpec) -> f64 {
    m.r_bar()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(mu: f64, kappa: f64, p: f64, j: f64) -> ModelSpec {
        ModelSpec::affine_power(mu, kappa, p, j).unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(m(2.0, 2.0, 2.0, 0.0).sigma(0.0), 1.0);
        assert!(m(1.0, 0.0, 1.0, 0.0).sigma(5.0).is_infinite());
        assert_eq!(m(1.0, 1.0, 2.0, 0.0).sigma(0.5), 1.5);
    }

    #[test]
    fn psi_examples() {
        assert_eq!(m(1.0, 0.0, 1.0, 0.0).psi(2.0), 2.0);
        let v = m(1.0, 1.0, 2.0, 0.0).psi(3.0);
        assert!((v - 1.5 * 3f64.powf(4.0 / 3.0)).abs() < 1e-12);
        assert!((v - 6.49).abs() < 0.01);
        assert_eq!(m(1.0, 1.0, 2.0, 0.0).psi(0.0), 0.0);
    }

    #[test]
    fn psi_closed_form_matches_sup() {
        for &p in &[1.0, 1.5, 2.0, 3.0, 10.0] {
            let model = m(1.0, 1.0, p, 0.0);
            for &theta in &[0.5, 1.0, 4.0] {
                let brute = (0..200_000)
                    .map(|i| {
                        let x = i as f64 * 5e-5;
                        theta * model.f_prime(x) - 0.5 * model.f(x).powi(2)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let v = model.psi(theta);
                assert!((v - brute).abs() < 1e-4 * (1.0 + v), "p={p} theta={theta}: {v} vs {brute}");
            }
        }
    }

    #[test]
    fn a_bar_examples() {
        let base = m(1.0, 0.0, 1.0, 0.0);
        assert_eq!(base.a_bar(0.3, 1e6).unwrap(), 0.3);
        let half = base.with_coupling(0.5).unwrap();
        assert!((half.a_bar(0.0, 1e6).unwrap() - 1.0).abs() < 1e-10);
        let two = base.with_coupling(2.0).unwrap();
        assert!((two.a_bar(0.0, 1e6).unwrap() - (4.0 + 24f64.sqrt())).abs() < 1e-9);
        assert!(matches!(two.a_bar(0.0, 5.0), Err(Error::Bracket { .. })));
    }

    #[test]
    fn r_bar_examples() {
        let base = m(1.0, 0.0, 1.0, 0.0);
        assert!((base.r_bar() - 2f64.sqrt()).abs() < 1e-14);
        assert!((base.with_coupling(0.5).unwrap().r_bar() - 3f64.sqrt()).abs() < 1e-14);
        let sq = m(1.0, 1.0, 2.0, 0.0);
        assert!((sq.r_bar() - sq.psi(2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bounds_nondecreasing_in_coupling() {
        for &p in &[1.0, 2.0, 10.0] {
            let mut last = (0.0, 0.0);
            for i in 0..20 {
                let model = m(2.0, 2.0, p, i as f64 * 0.05);
                let cur = (model.a_bar(0.0, 1e30).unwrap(), model.r_bar());
                assert!(cur.0 >= last.0 - 1e-12 && cur.1 >= last.1 - 1e-12);
                last = cur;
            }
        }
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(ModelSpec::affine_power(0.0, 1.0, 2.0, 0.0).is_err());
        assert!(ModelSpec::affine_power(1.0, -1.0, 2.0, 0.0).is_err());
        assert!(ModelSpec::affine_power(1.0, 1.0, 0.5, 0.0).is_err());
        assert!(ModelSpec::affine_power(1.0, 1.0, 2.0, -0.1).is_err());
        let concave = Table::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 3.0]).unwrap();
        assert!(ModelSpec::new(Drift::Affine { mu: 1.0, kappa: 1.0 }, RateFn::Tabulated(concave), 0.0).is_err());
        let shifted = Table::new(vec![0.0, 1.0], vec![0.1, 2.0]).unwrap();
        assert!(ModelSpec::new(Drift::Affine { mu: 1.0, kappa: 1.0 }, RateFn::Tabulated(shifted), 0.0).is_err());
        let neg = Table::new(vec![0.0, 1.0], vec![-1.0, 2.0]).unwrap();
        assert!(ModelSpec::new(Drift::Tabulated(neg), RateFn::Power { p: 2.0 }, 0.0).is_err());
    }

    #[test]
    fn tabulated_matches_affine() {
        let xs: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let b = Table::new(xs.clone(), xs.iter().map(|x| 1.0 - x).collect()).unwrap();
        let f = Table::new(xs.clone(), xs.iter().map(|x| x * x).collect()).unwrap();
        let tab = ModelSpec::new(Drift::Tabulated(b), RateFn::Tabulated(f), 0.0).unwrap();
        assert!((tab.sigma(0.5) - 1.5).abs() < 1e-12);
        assert!((tab.b(0.35) - 0.65).abs() < 1e-12);
        assert!((tab.f(0.3) - 0.09).abs() < 1e-12);
        assert!(tab.f(0.35) >= 0.35 * 0.35);
        assert_eq!(tab.c_b(), 1.0);
        assert!(tab.c_phi().is_none());
    }
}
