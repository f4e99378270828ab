use super::march::{Marcher, HAZARD_CUT};
use super::RateSolution;
use crate::error::{Error, Result};
use crate::measures::{Atom, GridMeasure, SpatialGrid};
use crate::model::{Current, ModelSpec};

enum NodeKind {
    Atom(f64),
    Density(usize),
}

/// Marches the initial law and one column per grid time up to the node at `t`.
fn march_to<'a>(
    m: &'a ModelSpec,
    cur: &Current,
    nu: &GridMeasure,
    rate: &RateSolution,
    t: f64,
) -> Result<(Marcher<'a>, Vec<NodeKind>, usize)> {
    cur.validate()?;
    let grid = rate.grid;
    if t < grid.t0 - 1e-12 || t > grid.t_end() + 1e-9 * grid.dt {
        return Err(Error::InvalidArgument(format!("t = {t} outside [{}, {}]", grid.t0, grid.t_end())));
    }
    let i = grid.nearest(t);
    if (grid.t(i) - t).abs() > 1e-6 * grid.dt {
        return Err(Error::InvalidArgument(format!("t = {t} is not a grid node")));
    }
    let mut kinds = Vec::new();
    let mut mr = Marcher::new(m, grid);
    for a in &nu.atoms {
        mr.add_node(a.x, kinds.len() as f64);
        kinds.push(NodeKind::Atom(a.mass));
    }
    if let (Some(lo), Some(hi)) = (nu.density.iter().position(|d| *d > 0.0), nu.density.iter().rposition(|d| *d > 0.0)) {
        for k in lo.saturating_sub(1)..=(hi + 1).min(nu.grid.cells()) {
            mr.add_node(nu.grid.x(k), kinds.len() as f64);
            kinds.push(NodeKind::Density(k));
        }
    }
    mr.push_column();
    for _ in 0..i {
        mr.advance(cur);
        mr.push_column();
    }
    Ok((mr, kinds, i))
}

fn trapezoid_weight(j: usize, i: usize, dt: f64) -> f64 {
    if i == 0 {
        0.0
    } else if j == 0 || j == i {
        0.5 * dt
    } else {
        dt
    }
}

/// `E phi(Y_t)` from the rate: renewals since the start plus the survivors of the initial law.
pub fn marginal_law(
    m: &ModelSpec,
    cur: &Current,
    nu: &GridMeasure,
    rate: &RateSolution,
    t: f64,
    phi: impl Fn(f64) -> f64,
) -> Result<f64> {
    let (mr, kinds, i) = march_to(m, cur, nu, rate, t)?;
    let dt = rate.grid.dt;
    let mut s = 0.0;
    for c in 0..mr.cols.len() {
        let hz = mr.cols.hz[c];
        if hz <= HAZARD_CUT {
            let j = mr.cols.tag[c] as usize;
            s += trapezoid_weight(j, i, dt) * phi(mr.cols.x[c]) * (-hz).exp() * rate.values[j];
        }
    }
    for p in 0..mr.nodes.len() {
        let hz = mr.nodes.hz[p];
        if hz <= HAZARD_CUT {
            let w = match kinds[mr.nodes.tag[p] as usize] {
                NodeKind::Atom(mass) => mass,
                NodeKind::Density(k) => nu.grid.weight(k) * nu.density[k],
            };
            s += w * phi(mr.nodes.x[p]) * (-hz).exp();
        }
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("marginal law".into()));
    }
    Ok(s)
}

/// Law of `Y_t` pushed forward along the flow onto `out` (atoms of the initial law stay atoms).
///
/// Returns the normalized measure and its mass before normalization.
pub fn marginal_density(
    m: &ModelSpec,
    cur: &Current,
    nu: &GridMeasure,
    rate: &RateSolution,
    t: f64,
    out: SpatialGrid,
) -> Result<(GridMeasure, f64)> {
    let (mr, kinds, _) = march_to(m, cur, nu, rate, t)?;
    let dt = rate.grid.dt;
    let mut cells = vec![0.0; out.len()];
    let mut atoms = Vec::new();

    // renewals: consecutive start times bound an interval of positions
    let mut cols: Vec<(usize, f64, f64)> = (0..mr.cols.len())
        .filter(|&c| mr.cols.hz[c] <= HAZARD_CUT)
        .map(|c| (mr.cols.tag[c] as usize, mr.cols.x[c], (-mr.cols.hz[c]).exp()))
        .collect();
    cols.sort_by_key(|c| c.0);
    for w in cols.windows(2) {
        let ((j0, x0, s0), (j1, x1, s1)) = (w[0], w[1]);
        if j1 != j0 + 1 {
            continue;
        }
        let mass = 0.5 * dt * (s0 * rate.values[j0] + s1 * rate.values[j1]);
        deposit(&mut cells, out, x1.min(x0), x1.max(x0), mass);
    }

    // survivors of the initial law
    let mut dens: Vec<(usize, f64, f64)> = Vec::new();
    for p in 0..mr.nodes.len() {
        let hz = mr.nodes.hz[p];
        if hz > HAZARD_CUT {
            continue;
        }
        let s = (-hz).exp();
        match kinds[mr.nodes.tag[p] as usize] {
            NodeKind::Atom(mass) => atoms.push(Atom { x: mr.nodes.x[p], mass: mass * s }),
            NodeKind::Density(k) => dens.push((k, mr.nodes.x[p], nu.density[k] * s)),
        }
    }
    for w in dens.windows(2) {
        let ((k0, y0, d0), (k1, y1, d1)) = (w[0], w[1]);
        if k1 != k0 + 1 {
            continue;
        }
        let mass = 0.5 * nu.grid.dx * (d0 + d1);
        deposit(&mut cells, out, y0.min(y1), y0.max(y1), mass);
    }

    let density: Vec<f64> = cells.iter().enumerate().map(|(k, c)| c / out.weight(k)).collect();
    GridMeasure::normalized(out, density, atoms)
}

/// Spreads `mass` uniformly over `[lo, hi]` into the node cells `[x_k - dx/2, x_k + dx/2]`.
fn deposit(cells: &mut [f64], out: SpatialGrid, lo: f64, hi: f64, mass: f64) {
    if mass <= 0.0 {
        return;
    }
    let dx = out.dx;
    let last = cells.len() - 1;
    let node = |x: f64| (((x / dx) + 0.5).floor().max(0.0) as usize).min(last);
    if hi - lo <= 1e-14 * (1.0 + hi) {
        cells[node(lo)] += mass;
        return;
    }
    let dens = mass / (hi - lo);
    let (k0, k1) = (node(lo), node(hi));
    for k in k0..=k1 {
        let a = ((k as f64 - 0.5) * dx).max(lo);
        let b = if k == last { hi } else { ((k as f64 + 0.5) * dx).min(hi) };
        if b > a {
            cells[k] += dens * (b - a);
        }
    }
}
