use proptest::prelude::*;
use robinlab::geometry::{DomainSpec, PrefractalFamily, PrefractalSpec};
use robinlab::measure::{self, synthetic, EstimatorOptions};

fn opts() -> EstimatorOptions {
    EstimatorOptions::default()
}

fn dyadic(perimeter: f64, j: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    j.map(|j| perimeter * 0.5f64.powi(j)).collect()
}

#[test]
fn uniform_measure_has_dimension_one() {
    let arcs = synthetic::uniform_arcs(1.0, 1_000_000, 1);
    let fit = measure::information_dimension(&arcs, 1.0, &dyadic(1.0, 4..=12), &opts()).unwrap();
    assert!((fit.exponent - 1.0).abs() < 0.02, "D1 = {}", fit.exponent);
    let spec = measure::lq_spectrum(&arcs, 1.0, &[0.0, 2.0, 3.0], &dyadic(1.0, 4..=12), &opts())
        .unwrap();
    for d in spec.dimensions() {
        assert!((d - 1.0).abs() < 0.02, "D_q = {d}");
    }
}

#[test]
fn single_atom_has_dimension_zero() {
    let arcs = vec![0.3; 1000];
    let o = EstimatorOptions {
        min_occupied: 1,
        ..opts()
    };
    let fit = measure::information_dimension(&arcs, 1.0, &dyadic(1.0, 4..=10), &o).unwrap();
    assert!(fit.exponent.abs() < 0.02);
    let spec = measure::lq_spectrum(&arcs, 1.0, &[0.0, 2.0], &dyadic(1.0, 4..=10), &o).unwrap();
    assert!(spec.dimensions().iter().all(|d| d.abs() < 0.02));
}

#[test]
fn cascade_dimensions() {
    let w = 1.0 / 3.0;
    let arcs = synthetic::cascade(w, 16, 1_000_000, 7).unwrap();
    let scales = dyadic(1.0, 4..=12);
    let d1 = measure::information_dimension(&arcs, 1.0, &scales, &opts()).unwrap();
    let exact_d1 = synthetic::cascade_d1(w);
    assert!((exact_d1 - 0.9183).abs() < 1e-4);
    assert!((d1.exponent - exact_d1).abs() < 0.03, "D1 = {}", d1.exponent);

    let spec = measure::lq_spectrum(&arcs, 1.0, &[0.0, 1.0, 2.0, 3.0], &scales, &opts()).unwrap();
    let d2 = spec.fits[2].exponent;
    let exact_d2 = synthetic::cascade_dq(w, 2.0);
    assert!((exact_d2 - (5.0f64 / 9.0).ln() / 0.5f64.ln()).abs() < 1e-12);
    assert!((d2 - exact_d2).abs() < 0.03, "D2 = {d2}");
    assert!(spec.is_nonincreasing(2.0), "{:?}", spec.dimensions());
}

#[test]
fn cascade_sample_size_stability() {
    let scales = dyadic(1.0, 4..=10);
    let fit = |n, seed| {
        let arcs = synthetic::cascade(1.0 / 3.0, 16, n, seed).unwrap();
        measure::information_dimension(&arcs, 1.0, &scales, &opts()).unwrap()
    };
    let (a, b) = (fit(200_000, 1), fit(400_000, 2));
    let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.exponent - b.exponent).abs() < 2.0 * se.max(1e-3), "{} vs {}", a.exponent, b.exponent);
}

#[test]
fn square_uniform_ambient_dimension() {
    let d = DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
        .unwrap();
    let (_, pts) = synthetic::uniform_boundary(&d, 200_000, 3);
    let scales: Vec<f64> = (2..=6).map(|j| 0.5f64.powi(j)).collect();
    let fit = measure::arc_to_ambient(&pts, &d, &scales, &opts()).unwrap();
    assert!((fit.exponent - 1.0).abs() < 0.03, "D1 = {}", fit.exponent);
}

#[test]
fn arc_uniform_snowflake_has_boundary_dimension() {
    let spec = PrefractalSpec::new(PrefractalFamily::TriadicKochSnowflake, 5, 1.0);
    let d = DomainSpec::from_prefractal(spec).unwrap();
    let (_, pts) = synthetic::uniform_boundary(&d, 1_000_000, 4);
    let scales = measure::default_scales(3.0, 1.0, 5);
    let fit = measure::arc_to_ambient(&pts, &d, &scales, &opts()).unwrap();
    let target = 4f64.ln() / 3f64.ln();
    assert!((fit.exponent - target).abs() < 0.05, "D1 = {}", fit.exponent);
}

#[test]
fn window_and_occupancy_errors() {
    let arcs = synthetic::uniform_arcs(0.05, 50, 1);
    let err = measure::information_dimension(&arcs, 1.0, &dyadic(1.0, 4..=12), &opts());
    assert!(err.unwrap_err().to_string().contains("collect more samples"));
    let err = measure::information_dimension(&arcs, 1.0, &[0.1, 0.05], &opts());
    assert!(err.unwrap_err().to_string().contains("degenerate scale list"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measures_are_normalized(seed in any::<u64>(), n in 1usize..5000, k in 1i32..8) {
        let arcs = synthetic::uniform_arcs(3.5, n, seed);
        let m = measure::bin_hits(&arcs, 3.5, 3.5 * 0.5f64.powi(k)).unwrap();
        prop_assert!((m.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(m.masses.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn moment_dimensions_nonincreasing(w in 0.05f64..0.5, seed in 0u64..100) {
        let arcs = synthetic::cascade(w, 12, 100_000, seed).unwrap();
        let spec = measure::lq_spectrum(&arcs, 1.0, &[0.0, 1.0, 2.0, 4.0], &dyadic(1.0, 4..=9),
            &EstimatorOptions { min_occupied: 1, ..EstimatorOptions::default() }).unwrap();
        prop_assert!(spec.is_nonincreasing(2.0), "{:?}", spec.dimensions());
    }
}
