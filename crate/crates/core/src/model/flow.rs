use super::{g1, Current, Drift, ModelSpec};
use crate::error::{Error, Result};

/// Position at time `t` of the flow `dy/dt = b(y) + a_t` started from `x` at time `s`.
pub fn flow_at(m: &ModelSpec, cur: &Current, s: f64, t: f64, x: f64) -> Result<f64> {
    if !(t >= s) {
        return Err(Error::InvalidArgument(format!("flow needs t >= s, got s={s}, t={t}")));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("flow needs x >= 0, got {x}")));
    }
    Ok(m.flow(cur, s, t, x))
}

impl ModelSpec {
    pub(crate) fn flow(&self, cur: &Current, s: f64, t: f64, x: f64) -> f64 {
        let d = t - s;
        if d <= 0.0 {
            return x;
        }
        match self.drift {
            Drift::Affine { mu, kappa } => {
                x * (-kappa * d).exp() + mu * g1(kappa, d) + cur.exp_integral(kappa, s, t)
            }
            Drift::Tabulated(_) => self.rk4(cur, s, t, x),
        }
    }

    fn rk4(&self, cur: &Current, s: f64, t: f64, x: f64) -> f64 {
        let d = t - s;
        let n = (d / self.dt_flow).ceil().max(1.0) as usize;
        let h = d / n as f64;
        let rhs = |u: f64, y: f64| self.b(y.max(0.0)) + cur.value(u);
        let mut y = x;
        for i in 0..n {
            let u = s + i as f64 * h;
            let k1 = rhs(u, y);
            let k2 = rhs(u + 0.5 * h, y + 0.5 * h * k1);
            let k3 = rhs(u + 0.5 * h, y + 0.5 * h * k2);
            let k4 = rhs(u + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            y = y.max(0.0);
        }
        y
    }

    /// Generic 4th-order integration, also available for affine drifts.
    pub fn flow_numeric(&self, cur: &Current, s: f64, t: f64, x: f64) -> f64 {
        if t <= s {
            return x;
        }
        self.rk4(cur, s, t, x)
    }
}

/// Positions reached from a common start time at a fixed set of step fractions.
///
/// For affine drifts the map is `x -> decay[q] x + offset[q]`, shared by every particle.
#[derive(Debug, Clone)]
pub(crate) struct StepMap {
    pub t0: f64,
    pub h: f64,
    pub fractions: Vec<f64>,
    pub decay: Vec<f64>,
    pub offset: Vec<f64>,
    pub affine: bool,
}

impl StepMap {
    pub fn new(m: &ModelSpec, cur: &Current, t0: f64, h: f64, fractions: &[f64]) -> Self {
        let mut map = StepMap {
            t0,
            h,
            fractions: fractions.to_vec(),
            decay: Vec::new(),
            offset: Vec::new(),
            affine: false,
        };
        map.reset(m, cur, t0, h);
        map
    }

    pub fn reset(&mut self, m: &ModelSpec, cur: &Current, t0: f64, h: f64) {
        self.t0 = t0;
        self.h = h;
        self.decay.clear();
        self.offset.clear();
        if let Some((mu, kappa)) = m.affine() {
            self.affine = true;
            for &c in &self.fractions {
                let d = c * h;
                self.decay.push((-kappa * d).exp());
                self.offset.push(mu * g1(kappa, d) + cur.exp_integral(kappa, t0, t0 + d));
            }
        }
    }

    /// Fill `out[q]` with the position at fraction `q` starting from `x`.
    #[inline]
    pub fn apply(&self, m: &ModelSpec, cur: &Current, x: f64, out: &mut [f64]) {
        if self.affine {
            for q in 0..self.fractions.len() {
                out[q] = self.decay[q] * x + self.offset[q];
            }
        } else {
            let mut y = x;
            let mut t = self.t0;
            for (q, &c) in self.fractions.iter().enumerate() {
                let tq = self.t0 + c * self.h;
                y = m.flow(cur, t, tq, y);
                t = tq;
                out[q] = y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drift, RateFn, Table, TimeGrid};
    use proptest::prelude::*;

    #[test]
    fn flow_examples() {
        let m = ModelSpec::affine_power(2.0, 2.0, 2.0, 0.0).unwrap();
        let zero = Current::constant(0.0);
        assert!((flow_at(&m, &zero, 0.0, 40.0, 0.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(flow_at(&m, &zero, 1.0, 1.0, 3.7).unwrap(), 3.7);
        assert!(flow_at(&m, &zero, 1.0, 0.5, 0.0).is_err());
        assert!(flow_at(&m, &zero, 0.0, 1.0, -1.0).is_err());

        let m = ModelSpec::affine_power(1.0, 0.5, 2.0, 0.0).unwrap();
        let cur = Current::constant(0.25);
        let exact = (1.25 / 0.5) * (1.0 - (-0.5f64).exp());
        let v = flow_at(&m, &cur, 0.0, 1.0, 0.0).unwrap();
        assert!((v - exact).abs() < 1e-14);
        assert!((m.flow_numeric(&cur, 0.0, 1.0, 0.0) - v).abs() < 1e-8);
    }

    #[test]
    fn closed_form_matches_integrator() {
        let m = ModelSpec::affine_power(1.3, 0.7, 2.0, 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 10).unwrap();
        let currents = [
            Current::constant(0.4),
            Current::ExpApproach { a: 0.2, c: 0.5, lambda: 0.8 },
            Current::Sampled { grid, values: (0..=10).map(|k| 0.1 * k as f64).collect() },
        ];
        for cur in &currents {
            for &(s, t, x) in &[(0.0, 3.0, 0.0), (0.7, 4.1, 2.5), (2.0, 2.3, 1.0)] {
                let a = m.flow(cur, s, t, x);
                let b = m.flow_numeric(cur, s, t, x);
                assert!((a - b).abs() < 1e-8, "{cur:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tabulated_drift_flow() {
        let xs: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let b = Table::new(xs.clone(), xs.iter().map(|x| 1.0 - x).collect()).unwrap();
        let tab = ModelSpec::new(Drift::Tabulated(b), RateFn::Power { p: 2.0 }, 0.0).unwrap();
        let aff = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap();
        let cur = Current::constant(0.5);
        let a = tab.flow(&cur, 0.0, 2.0, 0.2);
        let e = aff.flow(&cur, 0.0, 2.0, 0.2);
        assert!((a - e).abs() < 1e-10);
    }

    #[test]
    fn step_map_matches_flow() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap();
        let cur = Current::ExpApproach { a: 0.5, c: 0.05, lambda: 0.3 };
        let fr = [0.2, 0.5, 1.0];
        let map = StepMap::new(&m, &cur, 1.3, 0.1, &fr);
        let mut out = [0.0; 3];
        map.apply(&m, &cur, 0.4, &mut out);
        for (q, c) in fr.iter().enumerate() {
            assert!((out[q] - m.flow(&cur, 1.3, 1.3 + 0.1 * c, 0.4)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn comparison_principle(mu in 0.1f64..3.0, kappa in 0.0f64..3.0, a in 0.0f64..2.0,
                                extra in 0.0f64..1.0, x in 0.0f64..3.0, dx in 0.0f64..1.0,
                                s in 0.0f64..2.0, d in 0.0f64..5.0) {
            let m = ModelSpec::affine_power(mu, kappa, 2.0, 0.0).unwrap();
            let lo = Current::constant(a);
            let hi = Current::ExpApproach { a: a + extra, c: 0.3, lambda: 0.5 };
            let t = s + d;
            let ylo = m.flow(&lo, s, t, x);
            let yhi = m.flow(&hi, s, t, x + dx);
            prop_assert!(yhi >= ylo - 1e-12);
            // linear growth
            prop_assert!(ylo <= x + (mu + a) * d + 1e-12);
            // Lipschitz in the current with constant 1
            let diff = (m.flow(&hi, s, t, x) - m.flow(&lo, s, t, x)).abs();
            let l1 = extra * d + 0.3 * ((-0.5 * s) as f64).exp() * (1.0 - (-0.5 * d as f64).exp()) / 0.5;
            prop_assert!(diff <= l1 + 1e-12);
        }
    }
}
