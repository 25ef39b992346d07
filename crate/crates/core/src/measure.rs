//! Empirical boundary measures and their finite-scale dimensions.
//!
//! Hausdorff dimension cannot be read off samples, so the measures are
//! characterized by scaling exponents over an explicit window of scales:
//! the information dimension `D₁` (slope of `Σ μ ln μ` against `ln s`) and
//! the moment spectrum `D_q` (slope of `ln Σ μ^q` against `ln s`, divided by
//! `q - 1`). Empty bins contribute nothing (`x ln x → 0`).
//!
//! Two binnings are offered: equal arc-length cells along the boundary, and
//! ambient squares of side `s` in the plane. The ambient fit is the one that
//! compares with the dimension of the boundary as a planar set; the arc fit
//! is a diagnostic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Point2};
use crate::numeric::pairwise_sum;

/// Minimum number of occupied bins per scale, by default.
pub const DEFAULT_MIN_OCCUPIED: usize = 10;

/// Masses over equal arc-length bins of width `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub masses: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_count: u64,
    pub scale: f64,
    pub perimeter: f64,
}

fn bin_count(perimeter: f64, s: f64) -> usize {
    // The small slack keeps exact multiples from losing a bin to rounding.
    ((perimeter / s) * (1.0 + 1e-12)).floor().max(1.0) as usize
}

/// Bins arc coordinates into `floor(perimeter / s)` cells of width `s`; the
/// last cell also takes the leftover interval.
pub fn bin_hits(arcs: &[f64], perimeter: f64, s: f64) -> Result<EmpiricalMeasure> {
    if arcs.is_empty() {
        return Err(Error::Config("cannot bin an empty hit list".into()));
    }
    if !(perimeter.is_finite() && perimeter > 0.0) {
        return Err(Error::Config(format!("perimeter must be positive, got {perimeter}")));
    }
    if !(s > 0.0 && s < perimeter) {
        return Err(Error::Config(format!(
            "bin width must lie in (0, {perimeter}), got {s}"
        )));
    }
    let n = bin_count(perimeter, s);
    let mut counts = vec![0u64; n];
    for &arc in arcs {
        if !(arc >= 0.0 && arc < perimeter) {
            return Err(Error::Domain(format!("arc {arc} outside [0, {perimeter})")));
        }
        let k = ((arc / s).floor() as usize).min(n - 1);
        counts[k] += 1;
    }
    let total = arcs.len() as u64;
    Ok(EmpiricalMeasure {
        masses: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        counts,
        total_count: total,
        scale: s,
        perimeter,
    })
}

impl EmpiricalMeasure {
    /// Merges groups of `factor` consecutive bins; trailing bins join the last group.
    pub fn coarse_grain(&self, factor: usize) -> EmpiricalMeasure {
        let s = self.scale * factor as f64;
        let n = bin_count(self.perimeter, s);
        let mut counts = vec![0u64; n];
        for (k, &c) in self.counts.iter().enumerate() {
            counts[(k / factor).min(n - 1)] += c;
        }
        let total = self.total_count as f64;
        EmpiricalMeasure {
            masses: counts.iter().map(|&c| c as f64 / total).collect(),
            counts,
            total_count: self.total_count,
            scale: s,
            perimeter: self.perimeter,
        }
    }

    pub fn occupied(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    /// `Σ μ ln μ`.
    pub fn entropy_sum(&self) -> f64 {
        entropy_sum(&self.masses)
    }
}

fn entropy_sum(masses: &[f64]) -> f64 {
    let terms: Vec<f64> = masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| m * m.ln())
        .collect();
    pairwise_sum(&terms)
}

fn log_moment(masses: &[f64], q: f64) -> f64 {
    let terms: Vec<f64> = masses.iter().filter(|&&m| m > 0.0).map(|&m| m.powf(q)).collect();
    pairwise_sum(&terms).ln()
}

/// Least-squares line through `(ln s, value)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Strictly decreasing.
    pub scales_used: Vec<f64>,
    /// `(ln s, statistic)` pairs the line was fitted to.
    pub points: Vec<(f64, f64)>,
}

/// Ordinary least squares `y = intercept + slope·x`; returns
/// `(slope, intercept, slope stderr, r²)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let sxx = pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(
        &xs.iter()
            .zip(ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .collect::<Vec<_>>(),
    );
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .collect();
    let ssr = pairwise_sum(&resid);
    let sst = pairwise_sum(&ys.iter().map(|y| (y - my) * (y - my)).collect::<Vec<_>>());
    let stderr = if xs.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, stderr, r2)
}

/// Knobs shared by the dimension estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Each scale must have at least this many occupied bins.
    pub min_occupied: usize,
    /// Smallest admissible scale (finest boundary feature), if known.
    pub min_feature: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            min_occupied: DEFAULT_MIN_OCCUPIED,
            min_feature: None,
        }
    }
}

/// Sorts the scales in decreasing order and checks the window `[lo, hi]`.
fn scale_window(scales: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let mut s: Vec<f64> = scales.to_vec();
    if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Config("degenerate scale list: scales must be positive".into()));
    }
    s.sort_by(|a, b| b.total_cmp(a));
    s.dedup();
    if s.len() < 3 {
        return Err(Error::Config(format!(
            "degenerate scale list: need at least 3 distinct scales, got {}",
            s.len()
        )));
    }
    // Relative slack so exact window ends (e.g. perimeter/16) are accepted.
    let slack = 1e-9;
    if s[0] > hi * (1.0 + slack) {
        return Err(Error::Config(format!(
            "degenerate scale list: largest scale {} exceeds the window maximum {hi}",
            s[0]
        )));
    }
    let smin = *s.last().unwrap();
    if smin < lo * (1.0 - slack) {
        return Err(Error::Config(format!(
            "degenerate scale list: smallest scale {smin} is below the finest feature {lo}"
        )));
    }
    Ok(s)
}

fn check_occupancy(occupied: usize, s: f64, total: u64, opts: &EstimatorOptions) -> Result<()> {
    if occupied < opts.min_occupied {
        return Err(Error::Config(format!(
            "only {occupied} occupied bins at scale {s} (need {}); \
             collect more samples than the current {total} or use coarser scales",
            opts.min_occupied
        )));
    }
    Ok(())
}

fn fit_from(scales: Vec<f64>, stats: Vec<f64>, divisor: f64) -> ScalingFit {
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let (slope, intercept, stderr, r2) = fit_line(&xs, &stats);
    ScalingFit {
        exponent: slope / divisor,
        stderr: stderr / divisor.abs(),
        intercept,
        r_squared: r2,
        scales_used: scales,
        points: xs.into_iter().zip(stats).collect(),
    }
}

/// Arc-length information dimension of the hits over the given scales.
/// Admissible scales lie in `[min_feature, perimeter/16]`.
pub fn information_dimension(
    arcs: &[f64],
    perimeter: f64,
    scales: &[f64],
    opts: &EstimatorOptions,
) -> Result<ScalingFit> {
    let scales = scale_window(scales, opts.min_feature.unwrap_or(0.0), perimeter / 16.0)?;
    let mut stats = Vec::with_capacity(scales.len());
    for &s in &scales {
        let m = bin_hits(arcs, perimeter, s)?;
        check_occupancy(m.occupied(), s, m.total_count, opts)?;
        stats.push(m.entropy_sum());
    }
    Ok(fit_from(scales, stats, 1.0))
}

/// Generalized dimensions `D_q`, one fit per `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSpectrum {
    pub qs: Vec<f64>,
    pub fits: Vec<ScalingFit>,
}

impl MomentSpectrum {
    pub fn dimensions(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.exponent).collect()
    }

    /// Whether `D_q` is nonincreasing in `q` up to `k` combined standard errors.
    pub fn is_nonincreasing(&self, k: f64) -> bool {
        let mut idx: Vec<usize> = (0..self.qs.len()).collect();
        idx.sort_by(|&a, &b| self.qs[a].total_cmp(&self.qs[b]));
        idx.windows(2).all(|w| {
            let (lo, hi) = (&self.fits[w[0]], &self.fits[w[1]]);
            let tol = k * (lo.stderr * lo.stderr + hi.stderr * hi.stderr).sqrt();
            hi.exponent <= lo.exponent + tol + 1e-12
        })
    }
}

/// `D_q` over arc-length bins; `q = 1` is the information dimension.
pub fn lq_spectrum(
    arcs: &[f64],
    perimeter: f64,
    qs: &[f64],
    scales: &[f64],
    opts: &EstimatorOptions,
) -> Result<MomentSpectrum> {
    if qs.is_empty() || qs.iter().any(|q| !q.is_finite()) {
        return Err(Error::Config("moment orders must be finite and non-empty".into()));
    }
    let scales = scale_window(scales, opts.min_feature.unwrap_or(0.0), perimeter / 16.0)?;
    let mut measures = Vec::with_capacity(scales.len());
    for &s in &scales {
        let m = bin_hits(arcs, perimeter, s)?;
        check_occupancy(m.occupied(), s, m.total_count, opts)?;
        measures.push(m);
    }
    let fits = qs
        .iter()
        .map(|&q| {
            if q == 1.0 {
                let stats = measures.iter().map(|m| m.entropy_sum()).collect();
                fit_from(scales.clone(), stats, 1.0)
            } else {
                let stats = measures.iter().map(|m| log_moment(&m.masses, q)).collect();
                fit_from(scales.clone(), stats, q - 1.0)
            }
        })
        .collect();
    Ok(MomentSpectrum {
        qs: qs.to_vec(),
        fits,
    })
}

/// Masses of the points in the squares `[i s, (i+1) s) x [j s, (j+1) s)`
/// anchored at `anchor`, in a fixed (row-major key) order.
pub fn box_masses(points: &[Point2], anchor: Point2, s: f64) -> Vec<f64> {
    let mut counts: HashMap<(i64, i64), u64> = HashMap::new();
    for p in points {
        let key = (
            ((p.x - anchor.x) / s).floor() as i64,
            ((p.y - anchor.y) / s).floor() as i64,
        );
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut cells: Vec<((i64, i64), u64)> = counts.into_iter().collect();
    cells.sort_unstable_by_key(|&((i, j), _)| (j, i));
    let total = points.len() as f64;
    cells.into_iter().map(|(_, c)| c as f64 / total).collect()
}

/// Number of squares of side `s` (anchored at `anchor`) met by the polygon
/// boundary along a piece of positive length, found by sampling the midpoints
/// of each edge cut into pieces no longer than `s/4`.
pub fn boundary_box_count(domain: &DomainSpec, anchor: Point2, s: f64) -> usize {
    let poly = domain.outer();
    let mut keys = std::collections::HashSet::new();
    for e in 0..poly.edge_count() {
        let (a, b) = poly.edge(e);
        let n = ((a.dist(b) / (0.25 * s)).ceil() as usize).max(1);
        for k in 0..n {
            let p = a + (b - a) * ((k as f64 + 0.5) / n as f64);
            keys.insert((
                ((p.x - anchor.x) / s).floor() as i64,
                ((p.y - anchor.y) / s).floor() as i64,
            ));
        }
    }
    keys.len()
}

/// Information dimension in the ambient metric: the hit points are rebinned
/// into squares of side `s` anchored at the lower-left corner of the
/// polygon's bounding box. Scales must lie in `[finest edge, base scale]`
/// (the lower bound applies to fractal families only).
pub fn arc_to_ambient(
    points: &[Point2],
    domain: &DomainSpec,
    scales: &[f64],
    opts: &EstimatorOptions,
) -> Result<ScalingFit> {
    if points.is_empty() {
        return Err(Error::Config("cannot bin an empty hit list".into()));
    }
    let lo = match domain.prefractal() {
        Some(p) if p.family.is_fractal() => p.finest_edge_length(),
        _ => 0.0,
    };
    let lo = opts.min_feature.map_or(lo, |f| f.max(lo));
    let scales = scale_window(scales, lo, domain.length_scale())?;
    let anchor = domain.outer().bbox().min;
    let mut stats = Vec::with_capacity(scales.len());
    for &s in &scales {
        let masses = box_masses(points, anchor, s);
        // At coarse scales the boundary itself may meet fewer boxes than the
        // usual threshold.
        let needed = opts.min_occupied.min(boundary_box_count(domain, anchor, s));
        let local = EstimatorOptions {
            min_occupied: needed,
            ..*opts
        };
        check_occupancy(masses.len(), s, points.len() as u64, &local)?;
        stats.push(entropy_sum(&masses));
    }
    Ok(fit_from(scales, stats, 1.0))
}

/// Default scale window `base·r^{-j}`, `j = 1..g-1`, for a prefractal of
/// generation `g` with reduction ratio `r` (at least three scales).
pub fn default_scales(ratio: f64, base: f64, generation: u32) -> Vec<f64> {
    let top = generation.saturating_sub(1).max(3);
    (1..=top).map(|j| base * ratio.powi(-(j as i32))).collect()
}

/// Reference samplers with known dimensions.
pub mod synthetic {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::error::{Error, Result};
    use crate::geometry::{DomainSpec, Point2};

    /// Samples of the binary multiplicative cascade on `[0, 1)`: at each of
    /// `depth` levels the left half receives mass `w_left`, the right half
    /// `1 - w_left`; below the last level the mass is uniform.
    pub fn cascade(w_left: f64, depth: u32, n: usize, seed: u64) -> Result<Vec<f64>> {
        if !(w_left > 0.0 && w_left < 1.0) {
            return Err(Error::Config(format!("cascade weight must lie in (0, 1), got {w_left}")));
        }
        if depth == 0 || depth > 48 {
            return Err(Error::Config(format!("cascade depth must lie in 1..=48, got {depth}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let mut x = 0.0;
                let mut w = 0.5;
                for _ in 0..depth {
                    if rng.random::<f64>() >= w_left {
                        x += w;
                    }
                    w *= 0.5;
                }
                x + 2.0 * w * rng.random::<f64>()
            })
            .collect())
    }

    /// Information dimension of the cascade: `-(p ln p + q ln q) / ln 2`.
    pub fn cascade_d1(w_left: f64) -> f64 {
        let (p, q) = (w_left, 1.0 - w_left);
        -(p * p.ln() + q * q.ln()) / std::f64::consts::LN_2
    }

    /// Moment dimension of the cascade: `ln(p^q + (1-p)^q) / ((1 - q) ln 2)`.
    pub fn cascade_dq(w_left: f64, q: f64) -> f64 {
        if q == 1.0 {
            return cascade_d1(w_left);
        }
        (w_left.powf(q) + (1.0 - w_left).powf(q)).ln() / ((1.0 - q) * std::f64::consts::LN_2)
    }

    /// Arc coordinates uniform on `[0, perimeter)`.
    pub fn uniform_arcs(perimeter: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| perimeter * rng.random::<f64>()).collect()
    }

    /// Boundary points uniform in arc length, with their arc coordinates.
    pub fn uniform_boundary(domain: &DomainSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<Point2>) {
        let arcs = uniform_arcs(domain.perimeter(), n, seed);
        let pts = arcs.iter().map(|&s| domain.point_at_arc(s).0).collect();
        (arcs, pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn four_equal_bins() {
        let m = bin_hits(&[0.1, 1.1, 2.1, 3.1], 4.0, 1.0).unwrap();
        assert_eq!(m.masses, vec![0.25; 4]);
    }

    #[test]
    fn single_bin_takes_all() {
        let m = bin_hits(&[0.5, 0.6, 0.7], 4.0, 1.0).unwrap();
        assert_eq!(m.masses, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.occupied(), 1);
    }

    #[test]
    fn remainder_goes_to_last_bin() {
        let m = bin_hits(&[3.9], 3.95, 1.0).unwrap();
        assert_eq!(m.masses.len(), 3);
        assert_eq!(m.masses[2], 1.0);
    }

    #[test]
    fn bin_errors() {
        assert!(bin_hits(&[], 4.0, 1.0).is_err());
        assert!(bin_hits(&[5.0], 4.0, 1.0).is_err());
        assert!(bin_hits(&[1.0], 4.0, 4.0).is_err());
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (m, b, se, r2) = fit_line(&xs, &ys);
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-7);
        assert_eq!(r2, 1.0);
    }

    #[test]
    fn degenerate_scales_rejected() {
        let arcs: Vec<f64> = (0..1000).map(|k| k as f64 / 1000.0).collect();
        let o = EstimatorOptions::default();
        assert!(information_dimension(&arcs, 1.0, &[0.01, 0.02], &o).is_err());
        assert!(information_dimension(&arcs, 1.0, &[0.01, 0.01, 0.02], &o).is_err());
        assert!(information_dimension(&arcs, 1.0, &[0.5, 0.01, 0.02], &o).is_err());
        let o = EstimatorOptions {
            min_feature: Some(0.015),
            ..o
        };
        assert!(information_dimension(&arcs, 1.0, &[0.01, 0.02, 0.04], &o).is_err());
    }

    #[test]
    fn low_occupancy_rejected_with_hint() {
        let arcs = vec![0.5; 5];
        let err = information_dimension(&arcs, 1.0, &[0.05, 0.025, 0.0125], &Default::default())
            .unwrap_err();
        assert!(err.to_string().contains("more samples"));
    }

    #[test]
    fn single_atom_has_dimension_zero() {
        let arcs = vec![0.3; 1000];
        let o = EstimatorOptions {
            min_occupied: 1,
            ..Default::default()
        };
        let scales = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
        let fit = information_dimension(&arcs, 1.0, &scales, &o).unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.0, epsilon = 0.02);
        let spec = lq_spectrum(&arcs, 1.0, &[0.0, 2.0, 3.0], &scales, &o).unwrap();
        for d in spec.dimensions() {
            assert_abs_diff_eq!(d, 0.0, epsilon = 0.02);
        }
    }

    #[test]
    fn evenly_spread_points_have_dimension_one() {
        let arcs: Vec<f64> = (0..100_000).map(|k| (k as f64 + 0.5) / 100_000.0).collect();
        let scales = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
        let spec = lq_spectrum(&arcs, 1.0, &[0.0, 1.0, 2.0, 4.0], &scales, &Default::default()).unwrap();
        for d in spec.dimensions() {
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-5);
        }
        assert!(spec.is_nonincreasing(2.0));
    }

    #[test]
    fn default_window() {
        assert_eq!(default_scales(3.0, 1.0, 5).len(), 4);
        assert_abs_diff_eq!(default_scales(3.0, 1.0, 5)[3], 1.0 / 81.0, epsilon = 1e-15);
        assert_eq!(default_scales(3.0, 1.0, 2).len(), 3);
    }

    proptest! {
        #[test]
        fn coarse_graining_matches_direct_binning(
            arcs in proptest::collection::vec(0.0f64..6.0, 1..200),
            bins in 2usize..40,
        ) {
            let perimeter = 6.0;
            let s = perimeter / (2 * bins) as f64;
            let fine = bin_hits(&arcs, perimeter, s).unwrap();
            let direct = bin_hits(&arcs, perimeter, 2.0 * s).unwrap();
            prop_assert_eq!(fine.coarse_grain(2).masses, direct.masses);
        }

        #[test]
        fn masses_are_normalized(
            arcs in proptest::collection::vec(0.0f64..3.7, 1..500),
            s in 0.01f64..1.0,
        ) {
            let m = bin_hits(&arcs, 3.7, s).unwrap();
            prop_assert!((m.total_mass() - 1.0).abs() <= 1e-12);
            prop_assert!(m.masses.iter().all(|&x| x >= 0.0));
            prop_assert!((m.masses.len() as f64 * s - 3.7).abs() <= s);
        }
    }
}
