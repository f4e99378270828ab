use super::*;
use crate::invariant::{gamma, stationary};
use crate::measures::{Atom, SpatialGrid};
use proptest::prelude::*;

fn space() -> SpatialGrid {
    SpatialGrid::new(4.0, 1e-2).unwrap()
}

fn origin() -> GridMeasure {
    GridMeasure::dirac(0.0, space()).unwrap()
}

fn lif() -> ModelSpec {
    ModelSpec::affine_power(1.0, 0.0, 1.0, 0.0).unwrap()
}

fn quad() -> ModelSpec {
    ModelSpec::affine_power(1.0, 1.0, 2.0, 0.0).unwrap()
}

fn lumpy() -> GridMeasure {
    let g = space();
    let density: Vec<f64> = (0..g.len()).map(|k| {
        let x = g.x(k);
        if x < 2.0 { x * (2.0 - x) } else { 0.0 }
    }).collect();
    GridMeasure::normalized(g, density, vec![Atom { x: 0.0, mass: 0.3 }, Atom { x: 1.2, mass: 0.2 }]).unwrap().0
}

#[test]
fn gaussian_kernels() {
    let grid = TimeGrid::new(0.0, 1e-2, 800).unwrap();
    let (k, h) = kernels(&lif(), &Current::constant(0.0), &origin(), grid).unwrap();
    assert!(k.is_toeplitz());
    for i in (0..grid.len()).step_by(13) {
        let t = grid.t(i);
        assert!((k.get(i, 0) - t * (-0.5 * t * t).exp()).abs() < 1e-13);
        assert!((h.get(i, 0) - (-0.5 * t * t).exp()).abs() < 1e-13);
        assert_eq!(k.get(i, i), 0.0);
        assert_eq!(h.get(i, i), 1.0);
    }
}

#[test]
fn kernel_identity_general() {
    let grid = TimeGrid::new(0.5, 1e-2, 150).unwrap();
    let cur = Current::ExpApproach { a: 0.2, c: 0.4, lambda: 0.7 };
    let nu = lumpy();
    let (k, h) = kernels(&quad(), &cur, &nu, grid).unwrap();
    assert!(!k.is_toeplitz());
    assert!(k.min_value() >= 0.0 && h.min_value() >= 0.0);
    for j in [0, 40, 100] {
        let mut acc = 0.0;
        for i in j + 1..grid.len() {
            acc += 0.5 * grid.dt * (k.get(i, j) + k.get(i - 1, j));
            assert!((acc - (1.0 - h.get(i, j))).abs() < 1e-4, "i={i} j={j}");
        }
        assert!((h.get(j, j) - 1.0).abs() < 1e-12);
        let nu_f = nu.moment(|x| quad().f(x)).unwrap();
        assert!((k.get(j, j) - nu_f).abs() < 1e-13);
    }
}

#[test]
fn survival_dominated_by_reference() {
    let grid = TimeGrid::new(0.0, 2e-2, 100).unwrap();
    let reference = kernel_h(&quad(), &Current::constant(0.0), &origin(), grid).unwrap();
    let cur = Current::ExpApproach { a: 0.3, c: 1.0, lambda: 0.5 };
    let h = kernel_h(&quad(), &cur, &lumpy(), grid).unwrap();
    for i in 0..grid.len() {
        for j in 0..=i {
            assert!(h.get(i, j) <= reference.get(i - j, 0) + 1e-12);
        }
    }
}

#[test]
fn constant_kernel_solutions() {
    let grid = TimeGrid::new(0.0, 1e-3, 1000).unwrap();
    let c = 0.7;
    let k = KernelMatrix::toeplitz(grid, vec![c; grid.len()]).unwrap();
    let r = volterra_solve(&KernelMatrix::column(grid, vec![c; grid.len()]).unwrap(), &k).unwrap();
    for (i, v) in r.values.iter().enumerate() {
        assert!((v - c * (c * grid.t(i)).exp()).abs() < 1e-6);
    }
    let lower = KernelMatrix::from_fn(grid, |_, _| c);
    let res = resolvent(&lower).unwrap();
    for &(i, j) in &[(1000, 0), (700, 300), (5, 5)] {
        let exact = c * (c * (grid.t(i) - grid.t(j))).exp();
        assert!((res.get(i, j) - exact).abs() < 1e-6);
    }
    let zero = resolvent(&KernelMatrix::toeplitz(grid, vec![0.0; grid.len()]).unwrap()).unwrap();
    assert!(zero.first_column().iter().all(|v| *v == 0.0));
    let big = KernelMatrix::toeplitz(grid, vec![3000.0; grid.len()]).unwrap();
    assert!(matches!(volterra_solve(&KernelMatrix::column(grid, vec![1.0; grid.len()]).unwrap(), &big), Err(Error::StepSize(_))));
}

#[test]
fn resolvent_solves_second_kind_equation() {
    let grid = TimeGrid::new(0.0, 5e-3, 400).unwrap();
    let k = KernelMatrix::from_fn(grid, |i, j| {
        let (t, s) = (grid.t(i), grid.t(j));
        (t - s) * (-(t - s)).exp() * (1.0 + 0.3 * s.sin())
    });
    let w = KernelMatrix::column(grid, (0..grid.len()).map(|i| (grid.t(i)).cos() + 2.0).collect()).unwrap();
    let r = resolvent(&k).unwrap();
    // x = w + r * w
    let dt = grid.dt;
    let x: Vec<f64> = (0..grid.len()).map(|i| {
        let mut s = 0.0;
        if i > 0 {
            s = 0.5 * (r.get(i, 0) * w.get(0, 0) + r.get(i, i) * w.get(i, 0));
            for m in 1..i {
                s += r.get(i, m) * w.get(m, 0);
            }
        }
        w.get(i, 0) + dt * s
    }).collect();
    let direct = volterra_solve(&w, &k).unwrap();
    for i in 0..grid.len() {
        assert!((x[i] - direct.values[i]).abs() < 1e-6, "i={i}");
    }
}

#[test]
fn linear_rate_converges_to_gamma() {
    let grid = TimeGrid::new(0.0, 1e-2, 1000).unwrap();
    let r = solve_rate(&lif(), &Current::constant(0.0), &origin(), grid).unwrap();
    assert!((r.at(10.0) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-4);
    assert!(r.values.iter().all(|v| *v >= 0.0));
}

#[test]
fn second_order_in_dt() {
    // with p = 2 and δ_0 the dt^2 error term vanishes, so use a linear rate
    let m = lif();
    let cur = Current::ExpApproach { a: 0.3, c: 0.2, lambda: 1.0 };
    let sols: Vec<RateSolution> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| solve_rate(&m, &cur, &origin(), TimeGrid::span(0.0, 4.0, dt).unwrap()).unwrap())
        .collect();
    let diff = |a: &RateSolution, b: &RateSolution| {
        (0..=100).map(|k| (a.at(0.04 * k as f64) - b.at(0.04 * k as f64)).abs()).fold(0.0, f64::max)
    };
    let ratio = diff(&sols[0], &sols[1]) / diff(&sols[1], &sols[2]);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn streaming_matches_assembled_kernels() {
    let grid = TimeGrid::new(0.0, 1e-2, 300).unwrap();
    let m = quad();
    let cur = Current::ExpApproach { a: 0.5, c: 0.05, lambda: 0.3 };
    let stream = solve_rate(&m, &cur, &origin(), grid).unwrap();
    let (k, _) = kernels(&m, &cur, &origin(), grid).unwrap();
    let forcing = KernelMatrix::column(grid, k.first_column()).unwrap();
    let assembled = volterra_solve(&forcing, &k).unwrap();
    assert!(stream.sup_distance(&assembled).unwrap() < 1e-12);
    let constant = solve_rate(&m, &Current::constant(0.5), &lumpy(), grid).unwrap();
    let sampled = Current::Sampled { grid, values: vec![0.5; grid.len()] };
    let streamed = solve_rate(&m, &sampled, &lumpy(), grid).unwrap();
    assert!(constant.sup_distance(&streamed).unwrap() < 1e-12);
}

#[test]
fn picard_without_coupling_is_linear() {
    let grid = TimeGrid::new(0.0, 1e-2, 500).unwrap();
    let p = picard_closure(&quad(), &origin(), grid, PicardOptions::default()).unwrap();
    assert_eq!(p.iterations, 1);
    let lin = solve_rate(&quad(), &Current::constant(0.0), &origin(), grid).unwrap();
    assert!(p.rate.sup_distance(&lin).unwrap() < 1e-12);
}

#[test]
fn picard_fixed_point_and_bound() {
    let m = quad().with_coupling(0.5).unwrap();
    let grid = TimeGrid::new(0.0, 1e-2, 800).unwrap();
    let opts = PicardOptions { tol: 1e-11, ..Default::default() };
    let p = picard_closure(&m, &lumpy(), grid, opts).unwrap();
    let check = solve_rate(&m, &p.current, &lumpy(), grid).unwrap();
    let Current::Sampled { values, .. } = &p.current else { panic!() };
    let res = values.iter().zip(&check.values).map(|(a, r)| (a - 0.5 * r).abs()).fold(0.0, f64::max);
    assert!(res <= 1e-11, "residual {res}");
    let a_bar = m.a_bar(0.0, 1e6).unwrap();
    assert!(values.iter().all(|a| *a <= a_bar));
    // global iteration reaches the same fixed point on a short horizon
    let short = TimeGrid::new(0.0, 1e-2, 100).unwrap();
    let w = picard_closure(&m, &lumpy(), short, opts).unwrap();
    let g = picard_closure(&m, &lumpy(), short, PicardOptions { window: usize::MAX, ..opts }).unwrap();
    assert!(w.rate.sup_distance(&g.rate).unwrap() < 1e-9);
    assert!(g.iterations > w.iterations);
    let stuck = picard_closure(&m, &lumpy(), short, PicardOptions { window: usize::MAX, max_iter: 2, ..opts });
    assert!(matches!(stuck, Err(Error::NotConverged { .. })));
}

#[test]
fn marginal_law_identities() {
    let m = quad();
    let cur = Current::ExpApproach { a: 0.2, c: 0.3, lambda: 1.0 };
    let nu = lumpy();
    let grid = TimeGrid::new(0.0, 1e-3, 3000).unwrap();
    let r = solve_rate(&m, &cur, &nu, grid).unwrap();
    let at0 = marginal_law(&m, &cur, &nu, &r, 0.0, |x| x.cos()).unwrap();
    assert!((at0 - nu.moment(|x| x.cos()).unwrap()).abs() < 1e-12);
    for &t in &[0.5, 1.7, 3.0] {
        let one = marginal_law(&m, &cur, &nu, &r, t, |_| 1.0).unwrap();
        assert!((one - 1.0).abs() < 1e-4, "t={t}: {one}");
        let f = marginal_law(&m, &cur, &nu, &r, t, |x| m.f(x)).unwrap();
        assert!((f - r.at(t)).abs() < 1e-4);
        let (dens, mass) = marginal_density(&m, &cur, &nu, &r, t, space()).unwrap();
        assert!((mass - 1.0).abs() < 1e-4);
        let mean = marginal_law(&m, &cur, &nu, &r, t, |x| x).unwrap();
        assert!((dens.moment(|x| x).unwrap() - mean).abs() < 1e-3);
    }
    assert!(marginal_law(&m, &cur, &nu, &r, 3.5, |_| 1.0).is_err());
}

#[test]
fn marginal_of_invariant_law_is_stationary() {
    let m = quad();
    let a = 0.5;
    let st = stationary(&m, a, SpatialGrid::new(3.0, 1e-3).unwrap()).unwrap();
    let cur = Current::constant(a);
    let grid = TimeGrid::new(0.0, 1e-3, 3000).unwrap();
    let r = solve_rate(&m, &cur, &st.measure, grid).unwrap();
    for phi in [|x: f64| x, |x: f64| (3.0 * x).sin(), |x: f64| (x > 1.0) as i32 as f64] {
        let v = marginal_law(&m, &cur, &st.measure, &r, 3.0, phi).unwrap();
        assert!((v - st.measure.moment(phi).unwrap()).abs() < 1e-3, "{v} vs {}", st.measure.moment(phi).unwrap());
    }
    assert!((r.at(3.0) - gamma(&m, a).unwrap()).abs() < 1e-4);
}

#[test]
fn perturbation_without_perturbation() {
    let grid = TimeGrid::new(0.0, 2e-2, 200).unwrap();
    let cur = Current::ExpApproach { a: 0.5, c: 0.0, lambda: 0.3 };
    let p = perturbation_reconstruct(&quad(), &cur, grid).unwrap();
    let direct = solve_rate(&quad(), &Current::constant(0.5), &origin(), grid).unwrap();
    assert!(p.rate.sup_distance(&direct).unwrap() < 1e-12);
    assert_eq!(p.alpha_hat, 0.0);
    assert!(perturbation_reconstruct(&quad(), &Current::constant(0.5), grid).is_err());
}

#[test]
fn perturbation_matches_direct_solve() {
    let grid = TimeGrid::new(0.0, 2e-2, 300).unwrap();
    let cur = Current::ExpApproach { a: 0.5, c: 0.05, lambda: 0.3 };
    let p = perturbation_reconstruct(&quad(), &cur, grid).unwrap();
    let direct = solve_rate(&quad(), &cur, &origin(), grid).unwrap();
    let d = p.rate.sup_distance(&direct).unwrap();
    assert!(d < 1e-3, "distance {d}");
    assert!(p.alpha_hat > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn rates_are_nonnegative(mu in 0.2f64..2.0, kappa in 0.0f64..2.0, p in 1.0f64..4.0, a in 0.0f64..1.0) {
        let m = ModelSpec::affine_power(mu, kappa, p, 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 2e-2, 200).unwrap();
        let r = solve_rate(&m, &Current::constant(a), &lumpy(), grid).unwrap();
        prop_assert!(r.values.iter().all(|v| *v >= 0.0));
    }
}
