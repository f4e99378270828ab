//! Kernels `K`, `H`, the Volterra equation for the jump rate and its nonlinear closure.

mod march;
mod marginal;
mod perturb;
mod picard;

pub use marginal::{marginal_density, marginal_law};
pub use perturb::{perturbation_reconstruct, Perturbation};
pub use picard::{picard_closure, PicardOptions, PicardResult};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::GridMeasure;
use crate::model::{Current, ModelSpec, TimeGrid};
use march::Marcher;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// `k[i - j]`, for time-homogeneous kernels.
    Toeplitz(Vec<f64>),
    /// Packed lower triangle, row `i` holds `j = 0..=i`.
    Lower(Vec<f64>),
    /// Only `j = 0` is stored.
    Column(Vec<f64>),
}

/// Lower-triangular kernel `k[i][j] ≈ K(t_i, t_j)` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub grid: TimeGrid,
    storage: Storage,
}

impl KernelMatrix {
    /// Time-homogeneous kernel `K(t_i, t_j) = k[i - j]`.
    pub fn toeplitz(grid: TimeGrid, k: Vec<f64>) -> Result<Self> {
        check_len(&grid, k.len())?;
        Ok(KernelMatrix { grid, storage: Storage::Toeplitz(k) })
    }

    /// Kernel known only from the start time, `K(t_i, t_0)`.
    pub fn column(grid: TimeGrid, k: Vec<f64>) -> Result<Self> {
        check_len(&grid, k.len())?;
        Ok(KernelMatrix { grid, storage: Storage::Column(k) })
    }

    /// Full lower triangle built from `f(i, j)`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = grid.len();
        let mut v = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                v.push(f(i, j));
            }
        }
        KernelMatrix { grid, storage: Storage::Lower(v) }
    }

    fn lower(grid: TimeGrid, v: Vec<f64>) -> Self {
        KernelMatrix { grid, storage: Storage::Lower(v) }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        match &self.storage {
            Storage::Toeplitz(k) => k[i - j],
            Storage::Lower(v) => v[i * (i + 1) / 2 + j],
            Storage::Column(k) => {
                assert!(j == 0, "column kernel only stores j = 0");
                k[i]
            }
        }
    }

    /// `K(t_i, t_0)` for every `i`.
    pub fn first_column(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.get(i, 0)).collect()
    }

    pub fn is_toeplitz(&self) -> bool {
        matches!(self.storage, Storage::Toeplitz(_))
    }

    pub fn is_column(&self) -> bool {
        matches!(self.storage, Storage::Column(_))
    }

    pub fn min_value(&self) -> f64 {
        let v = match &self.storage {
            Storage::Toeplitz(k) | Storage::Column(k) | Storage::Lower(k) => k,
        };
        v.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Writes `i,j,value` rows of the lower triangle.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "t,s,value")?;
        let cols = if self.is_column() { 1 } else { self.grid.len() };
        for i in 0..self.grid.len() {
            for j in 0..=i.min(cols - 1) {
                writeln!(w, "{},{},{}", self.grid.t(i), self.grid.t(j), self.get(i, j))?;
            }
        }
        Ok(())
    }
}

fn check_len(grid: &TimeGrid, n: usize) -> Result<()> {
    if n != grid.len() {
        return Err(Error::GridMismatch(format!("{n} values for {} nodes", grid.len())));
    }
    Ok(())
}

/// Jump rate `r(t_k, t_0)` on a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct RateSolution {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Per-node standard errors, for empirical rates.
    pub stderr: Option<Vec<f64>>,
    pub current: Option<Current>,
    #[serde(skip)]
    pub origin: Option<GridMeasure>,
}

impl RateSolution {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Self {
        RateSolution { grid, values, stderr: None, current: None, origin: None }
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Value at the node nearest to `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.values[self.grid.nearest(t)]
    }

    /// Peak-to-peak amplitude over `[t1, t2]`.
    pub fn amplitude(&self, t1: f64, t2: f64) -> f64 {
        let (lo, hi) = self.range(t1, t2);
        hi - lo
    }

    fn range(&self, t1: f64, t2: f64) -> (f64, f64) {
        let (a, b) = (self.grid.nearest(t1), self.grid.nearest(t2));
        let s = &self.values[a..=b];
        (s.iter().cloned().fold(f64::INFINITY, f64::min), s.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Values on a coarser grid whose nodes are nodes of this one.
    pub fn restrict(&self, coarse: TimeGrid) -> Result<RateSolution> {
        let ratio = coarse.dt / self.grid.dt;
        let stride = ratio.round() as usize;
        let offset = (coarse.t0 - self.grid.t0) / self.grid.dt;
        let first = offset.round() as usize;
        if stride == 0 || (ratio - stride as f64).abs() > 1e-9 * ratio || (offset - first as f64).abs() > 1e-6 || offset < -1e-6 {
            return Err(Error::GridMismatch(format!("{coarse:?} is not a subgrid of {:?}", self.grid)));
        }
        if first + coarse.n * stride > self.grid.n {
            return Err(Error::GridMismatch(format!("{coarse:?} extends past {:?}", self.grid)));
        }
        let values = (0..=coarse.n).map(|k| self.values[first + k * stride]).collect();
        let stderr = self.stderr.as_ref().map(|se| (0..=coarse.n).map(|k| se[first + k * stride]).collect());
        Ok(RateSolution { grid: coarse, values, stderr, current: None, origin: None })
    }

    pub fn sup_distance(&self, other: &RateSolution) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Writes `t,r` (and `stderr` when present).
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        match &self.stderr {
            Some(se) => {
                writeln!(w, "t,rate,stderr")?;
                for (k, (v, e)) in self.values.iter().zip(se).enumerate() {
                    writeln!(w, "{},{},{}", self.grid.t(k), v, e)?;
                }
            }
            None => {
                writeln!(w, "t,r")?;
                for (k, v) in self.values.iter().enumerate() {
                    writeln!(w, "{},{}", self.grid.t(k), v)?;
                }
            }
        }
        Ok(())
    }
}

fn is_origin_dirac(nu: &GridMeasure) -> bool {
    nu.density.iter().all(|d| *d == 0.0) && nu.atoms.iter().all(|a| a.x == 0.0 || a.mass == 0.0)
}

/// `(K^nu(t_i, t_0), H^nu(t_i, t_0))` for every grid node.
pub fn forcing_columns(m: &ModelSpec, cur: &Current, nu: &GridMeasure, grid: TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    cur.validate()?;
    let mut mr = Marcher::new(m, grid).with_measure(nu);
    let mut k = Vec::with_capacity(grid.len());
    let mut h = Vec::with_capacity(grid.len());
    for i in 0..=grid.n {
        if i > 0 {
            mr.advance(cur);
        }
        let (kv, hv) = mr.forcing();
        k.push(kv);
        h.push(hv);
    }
    Ok((k, h))
}

/// Both kernels started from `nu`; `nu = δ_0` gives the renewal kernels `K_(a.)`, `H_(a.)`.
pub fn kernels(m: &ModelSpec, cur: &Current, nu: &GridMeasure, grid: TimeGrid) -> Result<(KernelMatrix, KernelMatrix)> {
    cur.validate()?;
    if cur.as_constant().is_some() {
        let (k, h) = forcing_columns(m, cur, nu, grid)?;
        return Ok((KernelMatrix::toeplitz(grid, k)?, KernelMatrix::toeplitz(grid, h)?));
    }
    let n = grid.len();
    if is_origin_dirac(nu) {
        let mut kv = vec![0.0; n * (n + 1) / 2];
        let mut hv = vec![0.0; n * (n + 1) / 2];
        let mut mr = Marcher::new(m, grid);
        for i in 0..n {
            if i > 0 {
                mr.advance(cur);
            }
            mr.push_column();
            let row = i * (i + 1) / 2;
            for c in 0..mr.cols.len() {
                let j = mr.cols.tag[c] as usize;
                let hz = mr.cols.hz[c];
                if hz <= march::HAZARD_CUT {
                    let s = (-hz).exp();
                    kv[row + j] = m.f(mr.cols.x[c]) * s;
                    hv[row + j] = s;
                }
            }
        }
        return Ok((KernelMatrix::lower(grid, kv), KernelMatrix::lower(grid, hv)));
    }
    // general law and time-dependent current: one march per start time
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let sub = TimeGrid { t0: grid.t(j), dt: grid.dt, n: (n - 1 - j).max(1) };
            let (k, h) = forcing_columns(m, cur, nu, sub).expect("validated current");
            (k[..n - j].to_vec(), h[..n - j].to_vec())
        })
        .collect();
    let k = KernelMatrix::from_fn(grid, |i, j| cols[j].0[i - j]);
    let h = KernelMatrix::from_fn(grid, |i, j| cols[j].1[i - j]);
    Ok((k, h))
}

/// `K^nu_(a.)(t_i, t_j)`.
pub fn kernel_k(m: &ModelSpec, cur: &Current, nu: &GridMeasure, grid: TimeGrid) -> Result<KernelMatrix> {
    Ok(kernels(m, cur, nu, grid)?.0)
}

/// `H^nu_(a.)(t_i, t_j)`.
pub fn kernel_h(m: &ModelSpec, cur: &Current, nu: &GridMeasure, grid: TimeGrid) -> Result<KernelMatrix> {
    Ok(kernels(m, cur, nu, grid)?.1)
}

/// Solves `r = K^nu + K * r` by the product trapezoid rule.
pub fn volterra_solve(forcing: &KernelMatrix, kernel: &KernelMatrix) -> Result<RateSolution> {
    if !forcing.grid.same_as(&kernel.grid) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", forcing.grid, kernel.grid)));
    }
    let grid = kernel.grid;
    let dt = grid.dt;
    let n = grid.len();
    let mut r = vec![0.0; n];
    r[0] = forcing.get(0, 0);
    for i in 1..n {
        let diag = 1.0 - 0.5 * dt * kernel.get(i, i);
        if !(diag > 0.0) {
            return Err(Error::StepSize(format!("1 - dt K(t,t)/2 = {diag} at t = {}", grid.t(i))));
        }
        let mut s = forcing.get(i, 0) + 0.5 * dt * kernel.get(i, 0) * r[0];
        match &kernel.storage {
            Storage::Toeplitz(k) => {
                for j in 1..i {
                    s += dt * k[i - j] * r[j];
                }
            }
            Storage::Lower(v) => {
                let row = &v[i * (i + 1) / 2..];
                for j in 1..i {
                    s += dt * row[j] * r[j];
                }
            }
            Storage::Column(_) => {
                return Err(Error::InvalidArgument("the Volterra kernel must be two-variable".into()));
            }
        }
        r[i] = s / diag;
        if !r[i].is_finite() {
            return Err(Error::NonFinite(format!("rate at t = {}", grid.t(i))));
        }
    }
    Ok(RateSolution::new(grid, r))
}

/// Resolvent `R = K + K * R`, column by column.
pub fn resolvent(kernel: &KernelMatrix) -> Result<KernelMatrix> {
    let grid = kernel.grid;
    let dt = grid.dt;
    let n = grid.len();
    let col = |j: usize| -> Result<Vec<f64>> {
        let mut r = vec![0.0; n - j];
        r[0] = kernel.get(j, j);
        for i in j + 1..n {
            let diag = 1.0 - 0.5 * dt * kernel.get(i, i);
            if !(diag > 0.0) {
                return Err(Error::StepSize(format!("1 - dt K(t,t)/2 = {diag} at t = {}", grid.t(i))));
            }
            let mut s = kernel.get(i, j) + 0.5 * dt * kernel.get(i, j) * r[0];
            for k in j + 1..i {
                s += dt * kernel.get(i, k) * r[k - j];
            }
            r[i - j] = s / diag;
        }
        Ok(r)
    };
    match &kernel.storage {
        Storage::Toeplitz(_) => KernelMatrix::toeplitz(grid, col(0)?),
        Storage::Lower(_) => {
            let cols = (0..n).into_par_iter().map(col).collect::<Result<Vec<_>>>()?;
            Ok(KernelMatrix::from_fn(grid, |i, j| cols[j][i - j]))
        }
        Storage::Column(_) => Err(Error::InvalidArgument("the Volterra kernel must be two-variable".into())),
    }
}

/// Linear jump rate from `nu` under the current `cur`.
pub fn solve_rate(m: &ModelSpec, cur: &Current, nu: &GridMeasure, grid: TimeGrid) -> Result<RateSolution> {
    cur.validate()?;
    let mut sol = if let Some(a) = cur.as_constant() {
        let (f, _) = forcing_columns(m, cur, nu, grid)?;
        let (k, _) = forcing_columns(m, &Current::constant(a), &dirac_origin(nu), grid)?;
        volterra_solve(&KernelMatrix::column(grid, f)?, &KernelMatrix::toeplitz(grid, k)?)?
    } else {
        let mut mr = Marcher::new(m, grid).with_measure(nu);
        let mut r = vec![0.0; grid.len()];
        r[0] = mr.forcing().0;
        mr.push_column();
        for i in 1..grid.len() {
            mr.advance(cur);
            r[i] = mr.forcing().0 + mr.column_sum(&r);
            mr.push_column();
        }
        RateSolution::new(grid, r)
    };
    sol.current = Some(cur.clone());
    sol.origin = Some(nu.clone());
    Ok(sol)
}

fn dirac_origin(like: &GridMeasure) -> GridMeasure {
    GridMeasure::dirac(0.0, like.grid).expect("unit atom")
}

/// `(α * β)(t_i, t_j)` by the trapezoid rule.
pub fn convolve(alpha: &KernelMatrix, beta: &KernelMatrix) -> Result<KernelMatrix> {
    if !alpha.grid.same_as(&beta.grid) {
        return Err(Error::GridMismatch("convolution operands differ".into()));
    }
    let grid = alpha.grid;
    let dt = grid.dt;
    let n = grid.len();
    let entry = |i: usize, j: usize| -> f64 {
        if i == j {
            return 0.0;
        }
        let mut s = 0.5 * (alpha.get(i, j) * beta.get(j, j) + alpha.get(i, i) * beta.get(i, j));
        for k in j + 1..i {
            s += alpha.get(i, k) * beta.get(k, j);
        }
        dt * s
    };
    if alpha.is_toeplitz() && beta.is_toeplitz() {
        return KernelMatrix::toeplitz(grid, (0..n).map(|i| entry(i, 0)).collect());
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (0..=i).map(|j| entry(i, j)).collect()).collect();
    Ok(KernelMatrix::lower(grid, rows.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests;
