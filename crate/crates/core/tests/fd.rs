use std::sync::Arc;

use proptest::prelude::*;
use robinlab::fd::{self, CellKind, Grid, ScalarField, SolverConfig};
use robinlab::geometry::{DomainSpec, Point2, PrefractalFamily, PrefractalSpec, SourceSpec};

fn square_with_source(r0: f64) -> DomainSpec {
    DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
        .unwrap()
        .with_source(Some(SourceSpec {
            center: Point2::new(0.5, 0.5),
            radius: r0,
        }))
        .unwrap()
}

fn quadratic(g: u32) -> DomainSpec {
    DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::QuadraticKochIsland, g, 1.0))
        .unwrap()
        .with_default_source()
        .unwrap()
}

fn grid(d: &DomainSpec, h: f64) -> Arc<Grid> {
    Arc::new(fd::rasterize(d, h).unwrap())
}

fn solve(g: &Arc<Grid>, a: f64) -> ScalarField {
    fd::solve_robin(g, a, &SolverConfig::default()).unwrap()
}

fn interior_cells(g: &Grid) -> Vec<usize> {
    (0..g.kinds.len()).filter(|&k| g.kinds[k] == CellKind::Interior).collect()
}

/// Grid-aligned spacing fine enough to resolve the default source.
fn spacing(g: u32) -> f64 {
    1.0 / (4f64.powi(g as i32) * 8.0).max(32.0)
}

fn a_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-3.0f64..3.0).prop_map(|e| 10f64.powf(e)),
        Just(0.0),
        Just(f64::INFINITY),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maximum_principle(a in a_strategy(), g in 0u32..3) {
        let d = quadratic(g);
        let grid = grid(&d, spacing(g));
        let u = solve(&grid, a);
        for k in 0..grid.kinds.len() {
            let v = u.value(k);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "u = {} at cell {}", v, k);
        }
    }

    #[test]
    fn robin_solution_decreases_with_a(e1 in -3.0f64..3.0, step in 0.05f64..2.0) {
        let (a1, a2) = (10f64.powf(e1), 10f64.powf(e1 + step));
        let grid = grid(&quadratic(1), 1.0 / 32.0);
        let (u1, u2) = (solve(&grid, a1), solve(&grid, a2));
        for k in interior_cells(&grid) {
            prop_assert!(u1.value(k) >= u2.value(k) - 1e-10);
        }
        let f1 = fd::flux_total(&u1).unwrap().total;
        let f2 = fd::flux_total(&u2).unwrap().total;
        prop_assert!(f1 <= f2 + 1e-10);
    }

    #[test]
    fn flux_bounds(a in (-3.0f64..3.0).prop_map(|e| 10f64.powf(e)), g in 0u32..3) {
        let d = quadratic(g);
        let grid = grid(&d, spacing(g));
        let f = fd::flux_total(&solve(&grid, a)).unwrap().total;
        let fd_ = fd::flux_total(&solve(&grid, f64::INFINITY)).unwrap().total;
        prop_assert!(f >= 0.0);
        prop_assert!(f <= a * d.perimeter() * (1.0 + 1e-9));
        prop_assert!(f <= fd_ * (1.0 + 1e-9));
    }

    #[test]
    fn green_decreases_with_a(e1 in -1.0f64..2.0, step in 0.1f64..1.0) {
        let d = square_with_source(0.1).with_source(None).unwrap();
        let grid = grid(&d, 1.0 / 32.0);
        let pole = grid.cell_at(Point2::new(0.3, 0.6)).unwrap();
        let cfg = SolverConfig::default();
        let g1 = fd::solve_green(&grid, pole, 10f64.powf(e1), &cfg).unwrap();
        let g2 = fd::solve_green(&grid, pole, 10f64.powf(e1 + step), &cfg).unwrap();
        for k in interior_cells(&grid) {
            prop_assert!(g2.value(k) >= 0.0);
            prop_assert!(g1.value(k) >= g2.value(k) - 1e-10);
        }
    }
}

#[test]
fn green_monotone_fine_grid() {
    let d = square_with_source(0.1).with_source(None).unwrap();
    let grid = grid(&d, 1.0 / 128.0);
    let pole = grid.cell_at(Point2::new(0.5, 0.5)).unwrap();
    let cfg = SolverConfig::default();
    let g1 = fd::solve_green(&grid, pole, 1.0, &cfg).unwrap();
    let g10 = fd::solve_green(&grid, pole, 10.0, &cfg).unwrap();
    for k in interior_cells(&grid) {
        assert!(g1.value(k) >= g10.value(k) - 1e-10);
    }
}

#[test]
fn green_is_symmetric() {
    let d = square_with_source(0.1).with_source(None).unwrap();
    let grid = grid(&d, 1.0 / 64.0);
    let cfg = SolverConfig::default();
    let y1 = grid.cell_at(Point2::new(0.2, 0.7)).unwrap();
    let y2 = grid.cell_at(Point2::new(0.8, 0.35)).unwrap();
    for a in [0.5, 5.0, f64::INFINITY] {
        let g1 = fd::solve_green(&grid, y1, a, &cfg).unwrap();
        let g2 = fd::solve_green(&grid, y2, a, &cfg).unwrap();
        let (x, y) = (g1.value(y2), g2.value(y1));
        assert!((x - y).abs() <= cfg.tol * 1e2 * x.abs().max(1.0), "a={a}: {x} vs {y}");
    }
}

#[test]
fn dirichlet_green_vanishes_on_faces() {
    let d = square_with_source(0.1).with_source(None).unwrap();
    let grid = grid(&d, 1.0 / 32.0);
    let pole = grid.cell_at(Point2::new(0.5, 0.5)).unwrap();
    let g = fd::solve_green(&grid, pole, f64::INFINITY, &SolverConfig::default()).unwrap();
    assert!(g.face_values().iter().all(|&v| v.abs() < 1e-14));
    assert!(fd::solve_green(&grid, pole, 0.0, &SolverConfig::default()).is_err());
}

#[test]
fn conservation_on_fine_grids() {
    let cases = [
        (square_with_source(0.1), 1.0 / 256.0),
        (quadratic(1), 1.0 / 256.0),
        (quadratic(2), 1.0 / 256.0),
    ];
    for (d, h) in cases {
        let grid = grid(&d, h);
        for a in [0.1, 1.0, 10.0, 100.0, f64::INFINITY] {
            let r = fd::flux_total(&solve(&grid, a)).unwrap();
            assert!(r.mismatch <= 0.01, "{} a={a}: mismatch {}", d.label(), r.mismatch);
        }
    }
}

#[test]
fn flux_strictly_increasing_in_a() {
    let grid = grid(&square_with_source(0.1), 1.0 / 64.0);
    let f: Vec<f64> = [0.1, 1.0, 10.0, 100.0, f64::INFINITY]
        .iter()
        .map(|&a| fd::flux_total(&solve(&grid, a)).unwrap().total)
        .collect();
    assert!(f.windows(2).all(|w| w[0] < w[1]), "{f:?}");
}

#[test]
fn profile_sums_to_total() {
    let grid = grid(&quadratic(2), 1.0 / 64.0);
    for a in [0.0, 0.7, 12.0] {
        let field = solve(&grid, a);
        let p = fd::flux_profile(&field).unwrap();
        assert!(p.faces.iter().all(|f| f.phi >= 0.0));
        let total: f64 = p.faces.iter().map(|f| f.phi * (f.arc_end - f.arc_start)).sum();
        assert!((total - p.total).abs() <= 1e-12 * p.total.max(1.0));
        let f = fd::flux_total(&field).unwrap().total;
        assert!((f - p.total).abs() <= 1e-12 * f.max(1.0));
        if a == 0.0 {
            assert!(p.faces.iter().all(|f| f.phi == 0.0));
        }
    }
}

#[test]
fn boundary_values_positive_and_decreasing_in_a() {
    let d = quadratic(2);
    let grid = grid(&d, 1.0 / 64.0);
    let mut deltas = Vec::new();
    for a in [0.1, 1.0, 10.0, 10.0 / d.perimeter()] {
        let delta = solve(&grid, a).min_boundary_value();
        assert!(delta > 0.0, "a={a}: min boundary u = {delta}");
        deltas.push(delta);
    }
    assert!(deltas[0] > deltas[1] && deltas[1] > deltas[2], "{deltas:?}");
}

/// The square flux approaches its fine-grid value and sits near the annulus
/// formula for the conformal radius of the square.
#[test]
fn square_flux_against_fine_grid() {
    let d = square_with_source(0.1);
    let f256 = fd::flux_total(&solve(&grid(&d, 1.0 / 256.0), 10.0)).unwrap().total;
    let f512 = fd::flux_total(&solve(&grid(&d, 1.0 / 512.0), 10.0)).unwrap().total;
    assert!((f256 - f512).abs() < 0.05 * f512, "{f256} vs {f512}");
    let r_eff = 0.5 * 1.0787;
    let band = 2.0 * std::f64::consts::PI / ((r_eff / 0.1f64).ln() + 1.0 / (10.0 * r_eff));
    assert!((f512 - band).abs() < 0.05 * band, "F = {f512}, annulus band {band}");
}

#[test]
fn probe_self_convergence() {
    let d = square_with_source(0.1);
    let probe = Point2::new(0.25, 0.5);
    let u: Vec<f64> = [64.0, 128.0, 256.0, 1024.0]
        .iter()
        .map(|&n| solve(&grid(&d, 1.0 / n), 10.0).probe(probe).unwrap())
        .collect();
    let (e1, e2) = ((u[0] - u[3]).abs(), (u[1] - u[3]).abs());
    let order = (e1 / e2).log2();
    assert!(order >= 0.9, "observed order {order} from {u:?}");
    assert!((u[2] - u[3]).abs() < 0.02 * u[3], "h=1/256 {} vs 1/1024 {}", u[2], u[3]);
}

#[test]
fn sor_reaches_cg_solution() {
    let grid = grid(&quadratic(1), 1.0 / 32.0);
    let cg = solve(&grid, 3.0);
    let sor_cfg = SolverConfig {
        method: fd::SolverMethod::SuccessiveOverRelaxation,
        ..SolverConfig::default()
    };
    let sor = fd::solve_robin(&grid, 3.0, &sor_cfg).unwrap();
    for k in interior_cells(&grid) {
        assert!((cg.value(k) - sor.value(k)).abs() < 1e-7);
    }
}
