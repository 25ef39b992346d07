use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robinlab::geometry::{
    build_prefractal, point_segment_distance_sq, segments_intersect, DomainSpec, Point2, Polygon,
    PrefractalFamily, PrefractalSpec,
};

fn snowflake(g: u32) -> DomainSpec {
    DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::TriadicKochSnowflake, g, 1.0))
        .unwrap()
}

/// Minimum over all edges, ties to the lowest id.
fn brute_force(poly: &Polygon, p: Point2) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for i in 0..poly.edge_count() {
        let (a, b) = poly.edge(i);
        let (d2, _) = point_segment_distance_sq(p, a, b);
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    (best.0.sqrt(), best.1)
}

fn interior_points(d: &DomainSpec, n: usize, seed: u64) -> Vec<Point2> {
    let bb = d.outer().bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point2::new(
            rng.random_range(bb.min.x..bb.max.x),
            rng.random_range(bb.min.y..bb.max.y),
        );
        if d.contains(p) {
            out.push(p);
        }
    }
    out
}

#[test]
fn accelerated_distance_matches_brute_force() {
    let d = snowflake(3);
    for p in interior_points(&d, 1000, 3) {
        let fast = d.distance_to_boundary(p).unwrap();
        let (dist, edge) = brute_force(d.outer(), p);
        assert_eq!(fast.dist, dist, "at {p:?}");
        assert_eq!(fast.edge_id, edge, "at {p:?}");
    }
}

#[test]
fn generated_polygons_are_simple() {
    let families = [
        (PrefractalFamily::TriadicKochSnowflake, 3),
        (PrefractalFamily::QuadraticKochIsland, 2),
        (PrefractalFamily::Square, 0),
        (PrefractalFamily::DiskPolygon { n_sides: 64 }, 0),
    ];
    for (family, gmax) in families {
        for g in 0..=gmax {
            let poly = build_prefractal(&PrefractalSpec::new(family, g, 1.0)).unwrap();
            let v = poly.vertices();
            let n = v.len();
            assert!(poly.signed_area() > 0.0, "{family:?} g={g} is not counterclockwise");
            for i in 0..n {
                for j in i + 1..n {
                    let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                    if adjacent {
                        continue;
                    }
                    assert!(
                        !segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]),
                        "{family:?} g={g}: edges {i} and {j} cross"
                    );
                }
            }
        }
    }
}

#[test]
fn prefractal_perimeters() {
    for g in 0..=6 {
        let d = snowflake(g);
        assert_eq!(d.edge_count(), 3 * 4usize.pow(g));
        let expected = 3.0 * (4.0f64 / 3.0).powi(g as i32);
        assert!((d.perimeter() - expected).abs() < 1e-9, "g={g}");
    }
    for g in 0..=3 {
        let d = DomainSpec::from_prefractal(PrefractalSpec::new(
            PrefractalFamily::QuadraticKochIsland,
            g,
            1.0,
        ))
        .unwrap();
        assert_eq!(d.edge_count(), 4 * 8usize.pow(g));
        assert!((d.perimeter() - 4.0 * 2f64.powi(g as i32)).abs() < 1e-9);
    }
}

#[test]
fn contains_implies_positive_distance() {
    let d = snowflake(4);
    let bb = d.outer().bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let p = Point2::new(
            rng.random_range(bb.min.x..bb.max.x),
            rng.random_range(bb.min.y..bb.max.y),
        );
        if d.contains(p) {
            assert!(d.distance_to_boundary(p).unwrap().dist > 0.0);
        }
    }
}

#[test]
fn square_examples() {
    let d = DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
        .unwrap();
    let c = d.distance_to_boundary(Point2::new(0.5, 0.5)).unwrap();
    assert!((c.dist - 0.5).abs() < 1e-15);
    let w = d.distance_to_boundary(Point2::new(0.1, 0.5)).unwrap();
    assert!((w.dist - 0.1).abs() < 1e-15);
    assert!(w.nearest.dist(Point2::new(0.0, 0.5)) < 1e-15);
    assert!(d.distance_to_boundary(Point2::new(2.0, 2.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn arc_round_trip(g in 0u32..5, t in 0.0f64..1.0) {
        let d = snowflake(g);
        let s = t * d.perimeter();
        let (p, edge) = d.point_at_arc(s);
        let back = d.arc_coordinate(p, edge).unwrap();
        let (q, _) = d.point_at_arc(back);
        prop_assert!(p.dist(q) < 1e-9);
        prop_assert!((0.0..d.perimeter()).contains(&back));
    }

    #[test]
    fn distance_matches_brute_force_quadratic(seed in 0u64..1000) {
        let d = DomainSpec::from_prefractal(PrefractalSpec::new(
            PrefractalFamily::QuadraticKochIsland, 2, 1.0,
        )).unwrap();
        for p in interior_points(&d, 20, seed) {
            let fast = d.distance_to_boundary(p).unwrap();
            let (dist, edge) = brute_force(d.outer(), p);
            prop_assert_eq!(fast.dist, dist);
            prop_assert_eq!(fast.edge_id, edge);
        }
    }

    #[test]
    fn safe_radius_never_exceeds_distance(seed in 0u64..1000) {
        let d = snowflake(4);
        for p in interior_points(&d, 20, seed) {
            let r = d.safe_radius(p);
            prop_assert!(r <= d.distance_to_boundary(p).unwrap().dist + 1e-12);
        }
    }
}
