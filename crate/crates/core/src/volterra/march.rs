//! Forward marching of particles along the flow, one grid step at a time.
//!
//! Two clouds are tracked: quadrature nodes of the initial law (forcing terms) and "columns",
//! particles restarted from 0 at each grid time (renewal kernels). Each carries its position and
//! accumulated hazard, so one step costs O(live particles).

use crate::measures::GridMeasure;
use crate::model::{Current, ModelSpec, StepMap, TimeGrid};
use crate::quadrature::{gl4, GaussLegendre};

/// Hazard beyond which a particle's survival is treated as zero.
pub(crate) const HAZARD_CUT: f64 = 60.0;

#[derive(Debug, Clone, Default)]
pub(crate) struct Cloud {
    pub x: Vec<f64>,
    pub hz: Vec<f64>,
    /// Quadrature weight (initial-law nodes) or start index (columns).
    pub tag: Vec<f64>,
}

impl Cloud {
    fn push(&mut self, x: f64, tag: f64) {
        self.x.push(x);
        self.hz.push(0.0);
        self.tag.push(tag);
    }

    fn compact(&mut self) {
        let mut k = 0;
        for i in 0..self.x.len() {
            if self.hz[i] <= HAZARD_CUT {
                self.x[k] = self.x[i];
                self.hz[k] = self.hz[i];
                self.tag[k] = self.tag[i];
                k += 1;
            }
        }
        self.x.truncate(k);
        self.hz.truncate(k);
        self.tag.truncate(k);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    fn copy_from(&mut self, other: &Cloud) {
        self.x.clone_from(&other.x);
        self.hz.clone_from(&other.hz);
        self.tag.clone_from(&other.tag);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    nodes: Cloud,
    cols: Cloud,
    step: usize,
}

pub(crate) struct Marcher<'a> {
    m: &'a ModelSpec,
    pub grid: TimeGrid,
    gl: &'static GaussLegendre,
    map: StepMap,
    pub nodes: Cloud,
    pub cols: Cloud,
    /// Particles sit at `grid.t(step)`.
    pub step: usize,
    buf: Vec<f64>,
}

impl<'a> Marcher<'a> {
    pub fn new(m: &'a ModelSpec, grid: TimeGrid) -> Self {
        let gl = gl4();
        let mut fr = gl.nodes.clone();
        fr.push(1.0);
        let map = StepMap::new(m, &Current::constant(0.0), grid.t0, grid.dt, &fr);
        Marcher { m, grid, gl, map, nodes: Cloud::default(), cols: Cloud::default(), step: 0, buf: vec![0.0; fr.len()] }
    }

    /// Adds the quadrature nodes of `nu` (weights = masses).
    pub fn with_measure(mut self, nu: &GridMeasure) -> Self {
        for (x, w) in nu.nodes() {
            self.nodes.push(x, w);
        }
        self
    }

    pub fn add_node(&mut self, x: f64, w: f64) {
        self.nodes.push(x, w);
    }

    /// Starts a particle at 0 at the current time.
    pub fn push_column(&mut self) {
        self.cols.push(0.0, self.step as f64);
    }

    /// Advances every particle over `[t_step, t_step + dt]` under `cur`.
    pub fn advance(&mut self, cur: &Current) {
        let t = self.grid.t(self.step);
        self.map.reset(self.m, cur, t, self.grid.dt);
        advance_cloud(self.m, cur, &self.map, self.gl, &mut self.nodes, &mut self.buf);
        advance_cloud(self.m, cur, &self.map, self.gl, &mut self.cols, &mut self.buf);
        self.step += 1;
        if self.step % 64 == 0 {
            self.nodes.compact();
            self.cols.compact();
        }
    }

    /// `(K^nu, H^nu)` at the current time.
    pub fn forcing(&self) -> (f64, f64) {
        let (mut k, mut h) = (0.0, 0.0);
        for i in 0..self.nodes.len() {
            let hz = self.nodes.hz[i];
            if hz <= HAZARD_CUT {
                let s = (-hz).exp();
                k += self.nodes.tag[i] * self.m.f(self.nodes.x[i]) * s;
                h += self.nodes.tag[i] * s;
            }
        }
        (k, h)
    }

    /// Trapezoid sum `Σ_j w_j K(t_step, t_j) r_j` over the live columns, `w_0 = dt/2`.
    pub fn column_sum(&self, r: &[f64]) -> f64 {
        let dt = self.grid.dt;
        let mut s = 0.0;
        for i in 0..self.cols.len() {
            let hz = self.cols.hz[i];
            if hz <= HAZARD_CUT {
                let j = self.cols.tag[i] as usize;
                let w = if j == 0 { 0.5 * dt } else { dt };
                s += w * self.m.f(self.cols.x[i]) * (-hz).exp() * r[j];
            }
        }
        s
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { nodes: self.nodes.clone(), cols: self.cols.clone(), step: self.step }
    }

    pub fn restore(&mut self, snap: &Snapshot) {
        self.nodes.copy_from(&snap.nodes);
        self.cols.copy_from(&snap.cols);
        self.step = snap.step;
    }
}

fn advance_cloud(m: &ModelSpec, cur: &Current, map: &StepMap, gl: &GaussLegendre, c: &mut Cloud, buf: &mut [f64]) {
    let h = map.h;
    let q = gl.len();
    if map.affine {
        let (dec, off) = (&map.decay, &map.offset);
        let w = &gl.weights;
        for i in 0..c.x.len() {
            if c.hz[i] > HAZARD_CUT {
                continue;
            }
            let x0 = c.x[i];
            let mut s = 0.0;
            for k in 0..q {
                s += w[k] * m.f(dec[k] * x0 + off[k]);
            }
            c.hz[i] += h * s;
            c.x[i] = (dec[q] * x0 + off[q]).max(0.0);
        }
    } else {
        for i in 0..c.x.len() {
            if c.hz[i] > HAZARD_CUT {
                continue;
            }
            map.apply(m, cur, c.x[i], buf);
            let s: f64 = (0..q).map(|k| gl.weights[k] * m.f(buf[k])).sum();
            c.hz[i] += h * s;
            c.x[i] = buf[q];
        }
    }
}

/// Linear current on one grid step, as used by the streaming solvers.
pub(crate) fn step_current(grid: &TimeGrid, i: usize, a0: f64, a1: f64) -> Current {
    if a0 == a1 {
        return Current::constant(a0);
    }
    Current::Sampled { grid: TimeGrid { t0: grid.t(i), dt: grid.dt, n: 1 }, values: vec![a0, a1] }
}
