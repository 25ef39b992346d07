use robinlab::experiments::{
    self, AbsorptionMode, DimensionConfig, Method, RowStatus, SweepConfig, SweepResult,
};
use robinlab::geometry::{DomainSpec, Point2, PrefractalFamily, PrefractalSpec, SourceSpec};

fn square_with_source() -> DomainSpec {
    DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
        .unwrap()
        .with_source(Some(SourceSpec {
            center: Point2::new(0.5, 0.5),
            radius: 0.1,
        }))
        .unwrap()
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

fn fd_sweep(h: f64) -> SweepResult {
    let cfg = SweepConfig {
        h: Some(h),
        ..SweepConfig::default()
    };
    experiments::sweep_a(&square_with_source(), &log_spaced(1e-2, 1e3, 11), Method::Fd, &cfg)
        .unwrap()
}

#[test]
fn square_sweep_approaches_dirichlet() {
    let s = fd_sweep(1.0 / 256.0);
    assert_eq!(s.failed_rows(), 0);
    let f: Vec<f64> = s.rows.iter().map(|r| r.flux.unwrap()).collect();
    assert!(f.windows(2).all(|w| w[0] < w[1]), "{f:?}");
    let dirichlet = s.rows[0].flux_dirichlet.unwrap();
    let last = *f.last().unwrap();
    assert!((dirichlet - last).abs() < 0.05 * dirichlet, "F(1e3) = {last}, F(inf) = {dirichlet}");
    for r in &s.rows {
        assert!(r.flux.unwrap() <= r.a * r.perimeter * (1.0 + 1e-9));
        assert_eq!(r.status, RowStatus::Ok);
    }
}

#[test]
fn crossover_is_grid_stable() {
    let coarse = experiments::detect_crossover(&fd_sweep(1.0 / 128.0)).unwrap();
    let fine = experiments::detect_crossover(&fd_sweep(1.0 / 256.0)).unwrap();
    let rel = (coarse.a_star - fine.a_star).abs() / fine.a_star;
    assert!(rel < 0.10, "a* = {} vs {}", coarse.a_star, fine.a_star);
}

#[test]
fn synthetic_crossovers() {
    // F(a) = a/(1+a) on a 0.1-spaced ln a grid crosses one half at a = 1.
    let a: Vec<f64> = (-30..=30).map(|k| (0.1 * k as f64).exp()).collect();
    let f: Vec<f64> = a.iter().map(|a| a / (1.0 + a)).collect();
    let x = experiments::detect_crossover(&SweepResult::from_curve(&a, &f, 1.0)).unwrap();
    assert!((x.a_star - 1.0).abs() < 0.02);

    // Annulus: F(a) = 2π/(ln(R/r0) + 1/(aR)), so a* = 1/(R ln(R/r0)).
    let (big_r, r0) = (0.5f64, 0.05f64);
    let a = log_spaced(1e-2, 1e3, 41);
    let f: Vec<f64> = a
        .iter()
        .map(|a| std::f64::consts::TAU / ((big_r / r0).ln() + 1.0 / (a * big_r)))
        .collect();
    let f_inf = std::f64::consts::TAU / (big_r / r0).ln();
    let x = experiments::detect_crossover(&SweepResult::from_curve(&a, &f, f_inf)).unwrap();
    let exact = 1.0 / (big_r * (big_r / r0).ln());
    assert!((exact - 0.8686).abs() < 1e-4);
    assert!((x.a_star - exact).abs() < 0.02 * exact, "a* = {}", x.a_star);
}

#[test]
fn emphysema_flux_grows_with_generation() {
    let cfg = SweepConfig::default();
    let s = experiments::emphysema_sweep(
        PrefractalFamily::QuadraticKochIsland,
        1.0,
        &[0, 1, 2],
        0.05,
        Method::Fd,
        &cfg,
    )
    .unwrap();
    let perims: Vec<f64> = s.rows.iter().map(|r| r.perimeter).collect();
    assert_eq!(perims, vec![4.0, 8.0, 16.0]);
    let f: Vec<f64> = s.rows.iter().map(|r| r.flux.unwrap()).collect();
    assert!(f.windows(2).all(|w| w[0] < w[1]), "{f:?}");

    let base = experiments::emphysema_sweep(
        PrefractalFamily::QuadraticKochIsland,
        1.0,
        &[0],
        0.05,
        Method::Fd,
        &cfg,
    )
    .unwrap();
    assert_eq!(base.rows.len(), 1);
    assert_eq!(base.rows[0].perimeter, 4.0);
}

#[test]
fn mc_sweep_reports_probe_values() {
    let cfg = SweepConfig {
        n_walks: 4000,
        probe: Some(Point2::new(0.25, 0.5)),
        seed: 3,
        ..SweepConfig::default()
    };
    let s = experiments::sweep_a(&square_with_source(), &[0.5, 5.0, 50.0], Method::Mc, &cfg)
        .unwrap();
    let u: Vec<(f64, f64)> = s
        .rows
        .iter()
        .map(|r| (r.u_probe.unwrap(), r.u_stderr.unwrap()))
        .collect();
    for w in u.windows(2) {
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 <= w[0].0 + 3.0 * se, "{u:?}");
    }
    assert!(s.rows.iter().all(|r| r.flux.is_none() && r.mean_reflections.is_some()));
    let again = experiments::sweep_a(&square_with_source(), &[0.5, 5.0, 50.0], Method::Mc, &cfg)
        .unwrap();
    assert_eq!(s, again);
}

#[test]
fn smooth_disk_shows_no_dichotomy() {
    let d = DomainSpec::from_prefractal(PrefractalSpec::new(
        PrefractalFamily::DiskPolygon { n_sides: 256 },
        0,
        1.0,
    ))
    .unwrap();
    let cfg = DimensionConfig {
        n_walks: 20_000,
        seed: 6,
        ..DimensionConfig::default()
    };
    let robin = AbsorptionMode::default_robin(&d);
    let report =
        experiments::dimension_experiment(&d, &[AbsorptionMode::Dirichlet, robin], &cfg).unwrap();
    for row in &report.rows {
        assert!((row.fit.exponent - 1.0).abs() < 0.05, "{}: {}", row.mode.name(), row.fit.exponent);
    }
}
