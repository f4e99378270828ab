//! Probability measures on `[0, x_max]`: a trapezoid density on a uniform grid plus atoms.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// Uniform spatial grid on `[0, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub x_max: f64,
    pub dx: f64,
}

impl SpatialGrid {
    pub fn new(x_max: f64, dx: f64) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite() && dx > 0.0 && dx <= x_max) {
            return Err(Error::InvalidArgument(format!("bad spatial grid x_max={x_max}, dx={dx}")));
        }
        let n = (x_max / dx).round();
        Ok(SpatialGrid { x_max: n * dx, dx })
    }

    /// `x_max = sigma_0 + 5` (or `5 (C_b + a_bar)` without a finite `sigma_0`), `dx = 1e-3`.
    pub fn default_for(m: &ModelSpec) -> Result<Self> {
        let s = m.sigma(0.0);
        let x_max = if s.is_finite() {
            s + 5.0
        } else {
            5.0 * (m.c_b() + m.a_bar(0.0, 1e6)?)
        };
        SpatialGrid::new(x_max, 1e-3)
    }

    pub fn cells(&self) -> usize {
        (self.x_max / self.dx).round() as usize
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.cells() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.dx
    }

    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.cells() {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    pub fn same_as(&self, other: &SpatialGrid) -> bool {
        self.cells() == other.cells() && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: SpatialGrid,
    /// Density at the grid nodes.
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
}

/// `nu(f)` and `nu(f^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FMoments {
    pub nu_f: f64,
    pub nu_f2: f64,
    pub finite: bool,
}

impl GridMeasure {
    /// Builds a measure and checks that its mass is 1.
    pub fn new(grid: SpatialGrid, density: Vec<f64>, atoms: Vec<Atom>) -> Result<Self> {
        let nu = GridMeasure::unchecked(grid, density, atoms)?;
        let mass = nu.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("measure has mass {mass}, expected 1")));
        }
        Ok(nu)
    }

    /// Builds a measure and rescales it to mass 1. Also returns the mass before rescaling.
    pub fn normalized(grid: SpatialGrid, density: Vec<f64>, atoms: Vec<Atom>) -> Result<(Self, f64)> {
        let mut nu = GridMeasure::unchecked(grid, density, atoms)?;
        let mass = nu.mass();
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument("measure has zero mass".into()));
        }
        nu.density.iter_mut().for_each(|d| *d /= mass);
        nu.atoms.iter_mut().for_each(|a| a.mass /= mass);
        Ok((nu, mass))
    }

    fn unchecked(grid: SpatialGrid, density: Vec<f64>, atoms: Vec<Atom>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} density values for {} nodes",
                density.len(),
                grid.len()
            )));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument("density must be finite and >= 0".into()));
        }
        if atoms.iter().any(|a| !(a.x.is_finite() && a.x >= 0.0 && a.mass.is_finite() && a.mass >= 0.0)) {
            return Err(Error::InvalidArgument("atoms need location >= 0 and mass >= 0".into()));
        }
        Ok(GridMeasure { grid, density, atoms })
    }

    pub fn dirac(x: f64, grid: SpatialGrid) -> Result<Self> {
        GridMeasure::new(grid, vec![0.0; grid.len()], vec![Atom { x, mass: 1.0 }])
    }

    /// Uniform law on `[lo, hi]`; endpoints between nodes are handled by renormalization.
    pub fn uniform(lo: f64, hi: f64, grid: SpatialGrid) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= grid.x_max + 1e-12) {
            return Err(Error::InvalidArgument(format!("bad uniform support [{lo}, {hi}]")));
        }
        let v = 1.0 / (hi - lo);
        let eps = 1e-9 * grid.dx;
        let density = (0..grid.len())
            .map(|k| {
                let x = grid.x(k);
                let interior_edge = |e: f64| (x - e).abs() < eps && k != 0 && k != grid.cells();
                if interior_edge(lo) || interior_edge(hi) {
                    0.5 * v
                } else if x >= lo - eps && x <= hi + eps {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        Ok(GridMeasure::normalized(grid, density, vec![])?.0)
    }

    /// The unit mass at 0 spread evenly over the first `cells` grid cells.
    pub fn mollified_origin(cells: usize, grid: SpatialGrid) -> Result<Self> {
        if cells == 0 || cells >= grid.cells() {
            return Err(Error::InvalidArgument(format!("cannot spread over {cells} cells")));
        }
        let mut cell = vec![0.0; grid.cells()];
        cell[..cells].iter_mut().for_each(|c| *c = 1.0 / (cells as f64 * grid.dx));
        GridMeasure::from_cell_averages(grid, &cell)
    }

    /// Node densities whose trapezoid masses reproduce the given cell masses node-cell by node-cell.
    pub fn from_cell_averages(grid: SpatialGrid, cells: &[f64]) -> Result<Self> {
        if cells.len() != grid.cells() {
            return Err(Error::GridMismatch(format!("{} cells for a grid with {}", cells.len(), grid.cells())));
        }
        let n = cells.len();
        let density = (0..=n)
            .map(|k| match k {
                0 => cells[0],
                k if k == n => cells[n - 1],
                k => 0.5 * (cells[k - 1] + cells[k]),
            })
            .collect();
        Ok(GridMeasure::normalized(grid, density, vec![])?.0)
    }

    /// Cell averages of the piecewise-linear density, atoms spread over `spread` cells.
    pub fn to_cell_averages(&self, spread: usize) -> Vec<f64> {
        let n = self.grid.cells();
        let mut cells: Vec<f64> = (0..n).map(|k| 0.5 * (self.density[k] + self.density[k + 1])).collect();
        let spread = spread.max(1).min(n);
        for a in &self.atoms {
            let k0 = ((a.x / self.grid.dx).floor() as usize).min(n - spread);
            for c in &mut cells[k0..k0 + spread] {
                *c += a.mass / (spread as f64 * self.grid.dx);
            }
        }
        cells
    }

    pub fn mass(&self) -> f64 {
        let d: f64 = (0..self.grid.len()).map(|k| self.grid.weight(k) * self.density[k]).sum();
        d + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Quadrature nodes `(x, weight)`: atoms first, then the nonzero density nodes.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self.atoms.iter().filter(|a| a.mass > 0.0).map(|a| (a.x, a.mass)).collect();
        for (k, d) in self.density.iter().enumerate() {
            if *d > 0.0 {
                out.push((self.grid.x(k), self.grid.weight(k) * d));
            }
        }
        out
    }

    /// `nu(g)`.
    pub fn moment(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let mut s = 0.0;
        for (x, w) in self.nodes() {
            let v = g(x);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("moment integrand at x={x}")));
            }
            s += w * v;
        }
        Ok(s)
    }

    pub fn check_f_moment(&self, m: &ModelSpec) -> FMoments {
        let nu_f = self.moment(|x| m.f(x)).unwrap_or(f64::INFINITY);
        let nu_f2 = self.moment(|x| m.f(x).powi(2)).unwrap_or(f64::INFINITY);
        FMoments { nu_f, nu_f2, finite: nu_f.is_finite() && nu_f2.is_finite() }
    }

    /// Largest point carrying mass.
    pub fn support_max(&self) -> f64 {
        let d = self.density.iter().rposition(|d| *d > 0.0).map(|k| self.grid.x(k)).unwrap_or(0.0);
        self.atoms.iter().filter(|a| a.mass > 0.0).map(|a| a.x).fold(d, f64::max)
    }

    pub fn sampler(&self) -> Sampler<'_> {
        let mut cum = Vec::with_capacity(self.atoms.len() + self.grid.cells());
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.mass;
            cum.push(acc);
        }
        for k in 0..self.grid.cells() {
            acc += 0.5 * self.grid.dx * (self.density[k] + self.density[k + 1]);
            cum.push(acc);
        }
        Sampler { nu: self, cum }
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for a in &self.atoms {
            writeln!(w, "# atom,{},{}", a.x, a.mass)?;
        }
        writeln!(w, "x,density")?;
        for (k, d) in self.density.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.x(k), d)?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut xs = Vec::new();
        let mut ds = Vec::new();
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# atom,") {
                let mut it = rest.split(',');
                let (x, m) = (it.next(), it.next());
                match (x, m) {
                    (Some(x), Some(m)) => atoms.push(Atom { x: num(x)?, mass: num(m)? }),
                    _ => return Err(Error::Parse(format!("bad atom line {line:?}"))),
                }
            } else if line.is_empty() || line.starts_with('#') || line.starts_with("x,") {
                continue;
            } else {
                let mut it = line.split(',');
                let (x, d) = (it.next(), it.next());
                match (x, d) {
                    (Some(x), Some(d)) => {
                        xs.push(num(x)?);
                        ds.push(num(d)?);
                    }
                    _ => return Err(Error::Parse(format!("bad data line {line:?}"))),
                }
            }
        }
        if xs.len() < 2 || xs[0] != 0.0 {
            return Err(Error::Parse("density table must start at x=0 with at least two rows".into()));
        }
        let dx = xs[1] - xs[0];
        let grid = SpatialGrid::new(*xs.last().unwrap(), dx)?;
        if grid.len() != xs.len() {
            return Err(Error::Parse("density grid is not uniform".into()));
        }
        GridMeasure::new(grid, ds, atoms)
    }
}

/// Inverse-CDF sampler for a [`GridMeasure`].
pub struct Sampler<'a> {
    nu: &'a GridMeasure,
    cum: Vec<f64>,
}

impl Sampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cum.last().unwrap_or(&0.0);
        let u = rng.gen::<f64>() * total;
        let i = self.cum.partition_point(|c| *c <= u).min(self.cum.len() - 1);
        let na = self.nu.atoms.len();
        if i < na {
            return self.nu.atoms[i].x;
        }
        let k = i - na;
        let dx = self.nu.grid.dx;
        let (d0, d1) = (self.nu.density[k], self.nu.density[k + 1]);
        let prev = if i == 0 { 0.0 } else { self.cum[i - 1] };
        let target = u - prev;
        // solve d0 s + (d1 - d0) s^2 / (2 dx) = target on [0, dx]
        let a = (d1 - d0) / (2.0 * dx);
        let s = if a.abs() < 1e-14 * (d0 + d1 + 1e-300) / dx || d0 + d1 == 0.0 {
            if d0 > 0.0 { target / d0 } else { dx * rng.gen::<f64>() }
        } else {
            let disc = (d0 * d0 + 4.0 * a * target).max(0.0);
            2.0 * target / (d0 + disc.sqrt())
        };
        self.nu.grid.x(k) + s.clamp(0.0, dx)
    }
}

/// L1 distance between two measures on the same grid; atoms match within `dx/2`.
pub fn l1_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    if !a.grid.same_as(&b.grid) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.grid, b.grid)));
    }
    let mut s: f64 = (0..a.grid.len()).map(|k| a.grid.weight(k) * (a.density[k] - b.density[k]).abs()).sum();
    let tol = 0.5 * a.grid.dx;
    let mut used = vec![false; b.atoms.len()];
    for x in &a.atoms {
        let hit = b.atoms.iter().enumerate().position(|(j, y)| !used[j] && (x.x - y.x).abs() <= tol);
        match hit {
            Some(j) => {
                used[j] = true;
                s += (x.mass - b.atoms[j].mass).abs();
            }
            None => s += x.mass,
        }
    }
    s += b.atoms.iter().zip(&used).filter(|(_, u)| !**u).map(|(y, _)| y.mass).sum::<f64>();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(3.0, 1e-3).unwrap()
    }

    #[test]
    fn moments_of_simple_measures() {
        let m = ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap();
        let d0 = GridMeasure::dirac(0.0, grid()).unwrap();
        assert_eq!(d0.moment(|x| m.f(x)).unwrap(), 0.0);
        let u = GridMeasure::uniform(0.0, 1.0, grid()).unwrap();
        assert!((u.mass() - 1.0).abs() < 1e-12);
        assert!((u.moment(|x| x).unwrap() - 0.5).abs() < 1e-6);
        let d2 = GridMeasure::dirac(2.0, grid()).unwrap();
        let fm = d2.check_f_moment(&m);
        assert_eq!((fm.nu_f, fm.nu_f2, fm.finite), (4.0, 16.0, true));
        assert!(d0.moment(|_| f64::NAN).is_err());
    }

    #[test]
    fn distances() {
        let u1 = GridMeasure::uniform(0.0, 1.0, grid()).unwrap();
        let u2 = GridMeasure::uniform(0.0, 2.0, grid()).unwrap();
        assert_eq!(l1_distance(&u1, &u1).unwrap(), 0.0);
        assert!((l1_distance(&u1, &u2).unwrap() - 1.0).abs() < 1e-3);
        let a = GridMeasure::dirac(0.0, grid()).unwrap();
        let b = GridMeasure::dirac(1.0, grid()).unwrap();
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        let other = GridMeasure::dirac(0.0, SpatialGrid::new(2.0, 1e-3).unwrap()).unwrap();
        assert!(l1_distance(&a, &other).is_err());
    }

    #[test]
    fn mass_is_checked() {
        let g = SpatialGrid::new(1.0, 0.5).unwrap();
        assert!(GridMeasure::new(g, vec![1.0, 1.0, 1.0], vec![]).is_ok());
        assert!(GridMeasure::new(g, vec![1.0, 1.0, 2.0], vec![]).is_err());
        assert!(GridMeasure::new(g, vec![1.0, -1.0, 3.0], vec![]).is_err());
        let (nu, mass) = GridMeasure::normalized(g, vec![2.0, 2.0, 2.0], vec![]).unwrap();
        assert_eq!(mass, 2.0);
        assert!((nu.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cell_round_trip() {
        let nu = GridMeasure::mollified_origin(3, grid()).unwrap();
        assert!((nu.mass() - 1.0).abs() < 1e-12);
        let cells = nu.to_cell_averages(3);
        let s: f64 = cells.iter().sum::<f64>() * 1e-3;
        assert!((s - 1.0).abs() < 1e-12);
        let back = GridMeasure::from_cell_averages(grid(), &cells).unwrap();
        assert!((back.moment(|x| x).unwrap() - nu.moment(|x| x).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip() {
        let g = SpatialGrid::new(1.0, 0.25).unwrap();
        let nu = GridMeasure::new(g, vec![0.0, 0.5, 0.5, 0.5, 0.0], vec![Atom { x: 0.0, mass: 0.625 }]).unwrap();
        let mut buf = Vec::new();
        nu.write_csv(&mut buf).unwrap();
        let back = GridMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back, nu);
    }

    #[test]
    fn sampler_reproduces_moments() {
        let g = SpatialGrid::new(2.0, 0.01).unwrap();
        let density: Vec<f64> = (0..g.len()).map(|k| g.x(k) * (2.0 - g.x(k))).collect();
        let (nu, _) = GridMeasure::normalized(g, density, vec![Atom { x: 0.0, mass: 0.5 }]).unwrap();
        let (nu, _) = GridMeasure::normalized(nu.grid, nu.density.clone(), nu.atoms.clone()).unwrap();
        let s = nu.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut m1 = 0.0;
        let mut zeros = 0;
        for _ in 0..n {
            let x = s.sample(&mut rng);
            assert!((0.0..=2.0).contains(&x));
            if x == 0.0 {
                zeros += 1;
            }
            m1 += x;
        }
        let expect = nu.moment(|x| x).unwrap();
        assert!((m1 / n as f64 - expect).abs() < 0.01);
        let p0 = nu.atoms[0].mass;
        assert!((zeros as f64 / n as f64 - p0).abs() < 0.01);
    }
}
