//! Scripted studies: flux sweeps over the absorption strength `a` and over
//! the prefractal generation, the half-Dirichlet crossover, and the
//! Dirichlet/Robin dimension comparison.
//!
//! Sweep rows are independent; each row's seed is derived from the sweep
//! seed and the row index, so results do not depend on scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{self, Grid, SolverConfig};
use crate::geometry::{
    similarity_dimension, DomainSpec, Point2, PrefractalFamily, PrefractalSpec,
};
use crate::measure::{self, EstimatorOptions, ScalingFit};
use crate::numeric::derive_seed;
use crate::walk::{self, WalkConfig, TIMEOUT_WARN_FRACTION};

/// Relative slack for the per-row flux bounds.
pub const BOUND_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fd,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    /// The row solved but violated `F ≤ min(a·perimeter, F_Dirichlet)`.
    BoundViolation,
    Failed,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::BoundViolation => "bound-violation",
            RowStatus::Failed => "failed",
        }
    }
}

/// One row of a sweep. Fields that do not apply to the method are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub a: f64,
    pub generation: Option<u32>,
    pub perimeter: f64,
    pub flux: Option<f64>,
    pub flux_dirichlet: Option<f64>,
    pub source_flux: Option<f64>,
    pub min_boundary_u: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub u_probe: Option<f64>,
    pub u_stderr: Option<f64>,
    pub mean_reflections: Option<f64>,
    pub timeouts: Option<u64>,
    pub seed: Option<u64>,
    pub status: RowStatus,
    pub message: String,
}

impl SweepRow {
    fn empty(index: usize, a: f64, generation: Option<u32>) -> Self {
        Self {
            index,
            a,
            generation,
            perimeter: f64::NAN,
            flux: None,
            flux_dirichlet: None,
            source_flux: None,
            min_boundary_u: None,
            iterations: None,
            residual: None,
            u_probe: None,
            u_stderr: None,
            mean_reflections: None,
            timeouts: None,
            seed: None,
            status: RowStatus::Ok,
            message: String::new(),
        }
    }

    fn fail(mut self, err: &Error) -> Self {
        self.status = RowStatus::Failed;
        self.message = err.to_string();
        self
    }
}

/// Everything needed to rerun a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub experiment: String,
    pub domain: String,
    pub prefractal: Option<PrefractalSpec>,
    pub method: Method,
    pub h: Option<f64>,
    pub eps: Option<f64>,
    pub tol: Option<f64>,
    pub n_walks: Option<u64>,
    pub probe: Option<Point2>,
    pub seed: u64,
    /// Fixed absorption strength of a generation sweep.
    pub fixed_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub meta: SweepMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// A sweep holding given `(a, F)` samples and the Dirichlet flux, for
    /// feeding closed-form curves to [`detect_crossover`].
    pub fn from_curve(a: &[f64], flux: &[f64], flux_dirichlet: f64) -> Self {
        let rows = a
            .iter()
            .zip(flux)
            .enumerate()
            .map(|(k, (&a, &f))| SweepRow {
                flux: Some(f),
                flux_dirichlet: Some(flux_dirichlet),
                ..SweepRow::empty(k, a, None)
            })
            .collect();
        SweepResult {
            meta: SweepMeta {
                experiment: "curve".into(),
                domain: "synthetic".into(),
                prefractal: None,
                method: Method::Fd,
                h: None,
                eps: None,
                tol: None,
                n_walks: None,
                probe: None,
                seed: 0,
                fixed_a: None,
            },
            rows,
        }
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.status != RowStatus::Ok).count()
    }
}

/// Parameters shared by the sweeps. `h` is required by the FD path;
/// `probe` and `n_walks` by the Monte Carlo path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub h: Option<f64>,
    pub solver: SolverConfig,
    pub eps: Option<f64>,
    pub n_walks: u64,
    pub probe: Option<Point2>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            h: None,
            solver: SolverConfig::default(),
            eps: None,
            n_walks: 10_000,
            probe: None,
            seed: 0,
        }
    }
}

fn check_a_list(a_list: &[f64]) -> Result<()> {
    if a_list.is_empty() {
        return Err(Error::Config("the a list is empty".into()));
    }
    if a_list.iter().any(|a| a.is_nan() || *a < 0.0) {
        return Err(Error::Config("a values must be nonnegative".into()));
    }
    if a_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("a values must be strictly increasing".into()));
    }
    Ok(())
}

fn fd_row(
    grid: &Arc<Grid>,
    index: usize,
    a: f64,
    generation: Option<u32>,
    dirichlet: Option<f64>,
    solver: &SolverConfig,
) -> SweepRow {
    let mut row = SweepRow::empty(index, a, generation);
    row.perimeter = grid.boundary_length();
    row.flux_dirichlet = dirichlet;
    let solved = fd::solve_robin(grid, a, solver).and_then(|field| {
        let flux = fd::flux_total(&field)?;
        Ok((field, flux))
    });
    let (field, flux) = match solved {
        Ok(x) => x,
        Err(e) => return row.fail(&e),
    };
    row.flux = Some(flux.total);
    row.source_flux = Some(flux.source_flux);
    row.min_boundary_u = Some(field.min_boundary_value());
    row.iterations = Some(field.report.iterations);
    row.residual = Some(field.report.residual);
    if !field.report.warnings.is_empty() {
        row.message = field.report.warnings.join("; ");
    }
    let mut violations = Vec::new();
    if a.is_finite() && flux.total > a * row.perimeter * (1.0 + BOUND_TOL) {
        violations.push(format!("F = {} exceeds a·perimeter = {}", flux.total, a * row.perimeter));
    }
    if let Some(fd) = dirichlet {
        if flux.total > fd * (1.0 + BOUND_TOL) {
            violations.push(format!("F = {} exceeds the Dirichlet flux {fd}", flux.total));
        }
    }
    if !violations.is_empty() {
        row.status = RowStatus::BoundViolation;
        row.message = violations.join("; ");
    }
    row
}

fn mc_row(
    domain: &DomainSpec,
    index: usize,
    a: f64,
    generation: Option<u32>,
    cfg: &SweepConfig,
    probe: Point2,
) -> SweepRow {
    let mut row = SweepRow::empty(index, a, generation);
    row.perimeter = domain.perimeter();
    let seed = derive_seed(cfg.seed, index as u64);
    row.seed = Some(seed);
    let mut wcfg = WalkConfig::for_domain(domain);
    if let Some(eps) = cfg.eps {
        wcfg = wcfg.with_eps(eps);
    }
    match walk::estimate_u(domain, probe, a, cfg.n_walks, &wcfg, seed) {
        Ok(est) => {
            row.u_probe = Some(est.mean);
            row.u_stderr = Some(est.stderr);
            row.mean_reflections = Some(est.mean_reflections);
            row.timeouts = Some(est.timeouts);
            if est.timeout_warning {
                row.message = format!("{} of {} walks timed out", est.timeouts, est.n_walks);
            }
            row
        }
        Err(e) => row.fail(&e),
    }
}

fn require_h(cfg: &SweepConfig) -> Result<f64> {
    cfg.h
        .ok_or_else(|| Error::Config("the fd method needs a grid spacing h".into()))
}

fn require_probe(cfg: &SweepConfig) -> Result<Point2> {
    cfg.probe
        .ok_or_else(|| Error::Config("the mc method needs a probe point".into()))
}

/// Flux (FD) or probe value (MC) for each `a` in a strictly increasing,
/// nonnegative list. The FD path adds the Dirichlet reference flux to every
/// row and checks `F ≤ min(a·perimeter, F_Dirichlet)`. A failing row is
/// kept with status `failed`.
pub fn sweep_a(
    domain: &DomainSpec,
    a_list: &[f64],
    method: Method,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    check_a_list(a_list)?;
    let mut meta = SweepMeta {
        experiment: "sweep-a".into(),
        domain: domain.label(),
        prefractal: domain.prefractal().copied(),
        method,
        h: None,
        eps: None,
        tol: None,
        n_walks: None,
        probe: None,
        seed: cfg.seed,
        fixed_a: None,
    };
    let rows = match method {
        Method::Fd => {
            let h = require_h(cfg)?;
            cfg.solver.validate()?;
            meta.h = Some(h);
            meta.tol = Some(cfg.solver.tol);
            let grid = Arc::new(fd::rasterize(domain, h)?);
            let dirichlet = fd::solve_robin(&grid, f64::INFINITY, &cfg.solver)
                .and_then(|f| fd::flux_total(&f))?
                .total;
            a_list
                .par_iter()
                .enumerate()
                .map(|(k, &a)| fd_row(&grid, k, a, None, Some(dirichlet), &cfg.solver))
                .collect()
        }
        Method::Mc => {
            let probe = require_probe(cfg)?;
            let wcfg = match cfg.eps {
                Some(eps) => WalkConfig::for_domain(domain).with_eps(eps),
                None => WalkConfig::for_domain(domain),
            };
            wcfg.validate(domain)?;
            meta.eps = Some(wcfg.eps);
            meta.n_walks = Some(cfg.n_walks);
            meta.probe = Some(probe);
            a_list
                .iter()
                .enumerate()
                .map(|(k, &a)| mc_row(domain, k, a, None, cfg, probe))
                .collect()
        }
    };
    Ok(SweepResult { meta, rows })
}

/// Grid spacing shared by all generations of a quadratic sweep up to
/// `g_max`: `base / (4^g_max · m)` with `m ≥ 2` and `h ≤ base/64`.
pub fn common_spacing(base_scale: f64, g_max: u32) -> f64 {
    let finest = 4f64.powi(g_max as i32);
    let m = (64.0 / finest).ceil().max(2.0);
    base_scale / (finest * m)
}

/// Flux (FD) or probe value (MC) at a fixed `a` across generations of one
/// family at a fixed base scale, each with the default source. The FD path uses a common grid spacing
/// unless `cfg.h` is given.
pub fn emphysema_sweep(
    family: PrefractalFamily,
    base_scale: f64,
    generations: &[u32],
    a: f64,
    method: Method,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if generations.is_empty() {
        return Err(Error::Config("the generation list is empty".into()));
    }
    if generations.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("generations must be strictly increasing".into()));
    }
    if a.is_nan() || a < 0.0 {
        return Err(Error::Config(format!("a must be nonnegative, got {a}")));
    }
    if method == Method::Fd && family != PrefractalFamily::QuadraticKochIsland {
        return Err(Error::Config(
            "the fd generation sweep needs the quadratic Koch island".into(),
        ));
    }
    let g_max = *generations.last().unwrap();
    let h = cfg.h.unwrap_or_else(|| common_spacing(base_scale, g_max));
    let mut meta = SweepMeta {
        experiment: "emphysema".into(),
        domain: family.name().into(),
        prefractal: Some(PrefractalSpec::new(family, g_max, base_scale)),
        method,
        h: None,
        eps: None,
        tol: None,
        n_walks: None,
        probe: None,
        seed: cfg.seed,
        fixed_a: Some(a),
    };
    let domains: Vec<Result<DomainSpec>> = generations
        .iter()
        .map(|&g| {
            DomainSpec::from_prefractal(PrefractalSpec::new(family, g, base_scale))
                .and_then(DomainSpec::with_default_source)
        })
        .collect();
    let rows: Vec<SweepRow> = match method {
        Method::Fd => {
            cfg.solver.validate()?;
            meta.h = Some(h);
            meta.tol = Some(cfg.solver.tol);
            generations
                .par_iter()
                .zip(domains.par_iter())
                .enumerate()
                .map(|(k, (&g, dom))| {
                    let grid = match dom.as_ref().map_err(clone_err).and_then(|d| fd::rasterize(d, h)) {
                        Ok(grid) => Arc::new(grid),
                        Err(e) => return SweepRow::empty(k, a, Some(g)).fail(&e),
                    };
                    let dirichlet = fd::solve_robin(&grid, f64::INFINITY, &cfg.solver)
                        .and_then(|f| fd::flux_total(&f));
                    match dirichlet {
                        Ok(d) => fd_row(&grid, k, a, Some(g), Some(d.total), &cfg.solver),
                        Err(e) => SweepRow::empty(k, a, Some(g)).fail(&e),
                    }
                })
                .collect()
        }
        Method::Mc => {
            let probe = require_probe(cfg)?;
            meta.n_walks = Some(cfg.n_walks);
            meta.probe = Some(probe);
            meta.eps = cfg.eps;
            generations
                .iter()
                .zip(&domains)
                .enumerate()
                .map(|(k, (&g, dom))| match dom {
                    Ok(d) => mc_row(d, k, a, Some(g), cfg, probe),
                    Err(e) => SweepRow::empty(k, a, Some(g)).fail(e),
                })
                .collect()
        }
    };
    Ok(SweepResult { meta, rows })
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Geometry(m) => Error::Geometry(m.clone()),
        Error::ResourceGuard(m) => Error::ResourceGuard(m.clone()),
        Error::Config(m) => Error::Config(m.clone()),
        other => Error::Internal(other.to_string()),
    }
}

/// Where the flux reaches half its Dirichlet value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub a_star: f64,
    pub bracket: (f64, f64),
    pub flux_bracket: (f64, f64),
    pub flux_dirichlet: f64,
}

/// Locates `a*` with `F(a*) = F(∞)/2` by linear interpolation in `(ln a, F)`
/// between the bracketing rows. Only finite, positive `a` with status `ok`
/// are used; their flux must be nondecreasing.
pub fn detect_crossover(sweep: &SweepResult) -> Result<CrossoverReport> {
    let pts: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok && r.a.is_finite() && r.a > 0.0)
        .filter_map(|r| r.flux.map(|f| (r.a, f)))
        .collect();
    let f_inf = sweep
        .rows
        .iter()
        .find_map(|r| r.flux_dirichlet)
        .or_else(|| {
            sweep
                .rows
                .iter()
                .find(|r| r.a == f64::INFINITY && r.status == RowStatus::Ok)
                .and_then(|r| r.flux)
        })
        .ok_or_else(|| Error::Config("the sweep carries no Dirichlet reference flux".into()))?;
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Config("sweep rows are not sorted by a".into()));
    }
    if pts.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(Error::Numerics("flux is not monotone increasing in a".into()));
    }
    let half = 0.5 * f_inf;
    for w in pts.windows(2) {
        let ((a0, f0), (a1, f1)) = (w[0], w[1]);
        if f0 <= half && half <= f1 && f1 > f0 {
            let t = (half - f0) / (f1 - f0);
            let ln_a = a0.ln() + t * (a1.ln() - a0.ln());
            return Ok(CrossoverReport {
                a_star: ln_a.exp(),
                bracket: (a0, a1),
                flux_bracket: (f0, f1),
                flux_dirichlet: f_inf,
            });
        }
    }
    Err(Error::Config(
        "sweep range too narrow: no pair of rows brackets half the Dirichlet flux".into(),
    ))
}

/// Absorption regime of a dimension run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AbsorptionMode {
    Dirichlet,
    Robin { a: f64 },
}

impl AbsorptionMode {
    /// Robin mode with `1/a = perimeter / 10`.
    pub fn default_robin(domain: &DomainSpec) -> Self {
        AbsorptionMode::Robin {
            a: 10.0 / domain.perimeter(),
        }
    }

    pub fn a(&self) -> f64 {
        match self {
            AbsorptionMode::Dirichlet => f64::INFINITY,
            AbsorptionMode::Robin { a } => *a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AbsorptionMode::Dirichlet => "dirichlet",
            AbsorptionMode::Robin { .. } => "robin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionConfig {
    pub n_walks: u64,
    pub seed: u64,
    /// Layer width; defaults to the walk module's choice for the domain.
    pub eps: Option<f64>,
    /// Ambient scales; defaults to [`default_window`].
    pub scales: Option<Vec<f64>>,
    pub estimator: EstimatorOptions,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            n_walks: 100_000,
            seed: 0,
            eps: None,
            scales: None,
            estimator: EstimatorOptions::default(),
        }
    }
}

/// Default ambient scales: `base·r^{-j}`, `j = 1..g-1`, with the family's
/// reduction ratio `r`; smooth families use `base·2^{-j}`, `j = 2..6`.
pub fn default_window(spec: &PrefractalSpec) -> Vec<f64> {
    if spec.family.is_fractal() {
        measure::default_scales(spec.family.ratio(), spec.base_scale, spec.generation)
    } else {
        (2..=6).map(|j| spec.base_scale * 0.5f64.powi(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub mode: AbsorptionMode,
    pub seed: u64,
    pub n_walks: u64,
    pub hits: usize,
    pub timeouts: u64,
    pub timeout_fraction: f64,
    pub mean_reflections: f64,
    /// Ambient information dimension.
    pub fit: ScalingFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub domain: String,
    pub prefractal: Option<PrefractalSpec>,
    pub start: Point2,
    pub eps: f64,
    pub scales: Vec<f64>,
    pub similarity_dimension: Option<f64>,
    pub rows: Vec<DimensionRow>,
}

impl DimensionReport {
    /// `(D_j - D_i) / sqrt(se_i² + se_j²)` between rows `i` and `j`.
    pub fn separation(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.rows[i].fit, &self.rows[j].fit);
        (b.exponent - a.exponent) / (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
    }
}

/// Samples the boundary measure from the centroid in each mode and fits the
/// ambient information dimension over a common window. Fails if more than
/// 1% of the walks of any mode time out.
pub fn dimension_experiment(
    domain: &DomainSpec,
    modes: &[AbsorptionMode],
    cfg: &DimensionConfig,
) -> Result<DimensionReport> {
    if modes.is_empty() {
        return Err(Error::Config("no absorption modes given".into()));
    }
    let start = domain.centroid();
    let mut wcfg = WalkConfig::for_domain(domain);
    if let Some(eps) = cfg.eps {
        wcfg = wcfg.with_eps(eps);
    }
    let scales = match (&cfg.scales, domain.prefractal()) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => default_window(p),
        (None, None) => {
            return Err(Error::Config(
                "explicit scales are required for a domain without a prefractal spec".into(),
            ))
        }
    };
    let mut rows = Vec::with_capacity(modes.len());
    for (k, mode) in modes.iter().enumerate() {
        let seed = derive_seed(cfg.seed, k as u64);
        let sample = walk::sample_measure(domain, start, mode.a(), cfg.n_walks, &wcfg, seed)?;
        let frac = sample.timeout_fraction();
        if frac > TIMEOUT_WARN_FRACTION {
            return Err(Error::TimeoutBudget(format!(
                "{} of {} {} walks timed out",
                sample.timeouts,
                sample.n_walks,
                mode.name()
            )));
        }
        let fit = measure::arc_to_ambient(&sample.points(), domain, &scales, &cfg.estimator)?;
        rows.push(DimensionRow {
            mode: *mode,
            seed,
            n_walks: cfg.n_walks,
            hits: sample.hits.len(),
            timeouts: sample.timeouts,
            timeout_fraction: frac,
            mean_reflections: sample.mean_reflections,
            fit,
        });
    }
    Ok(DimensionReport {
        domain: domain.label(),
        prefractal: domain.prefractal().copied(),
        start,
        eps: wcfg.eps,
        scales,
        similarity_dimension: domain.prefractal().map(similarity_dimension),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SourceSpec;
    use approx::assert_relative_eq;

    fn square_with_source() -> DomainSpec {
        DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
            .unwrap()
            .with_source(Some(SourceSpec {
                center: Point2::new(0.5, 0.5),
                radius: 0.1,
            }))
            .unwrap()
    }

    #[test]
    fn logistic_crossover() {
        let a: Vec<f64> = (-30..=30).map(|k| (0.1 * k as f64).exp()).collect();
        let f: Vec<f64> = a.iter().map(|a| a / (1.0 + a)).collect();
        let r = detect_crossover(&SweepResult::from_curve(&a, &f, 1.0)).unwrap();
        assert_relative_eq!(r.a_star, 1.0, max_relative = 0.02);
        assert!(r.flux_bracket.0 <= 0.5 && 0.5 <= r.flux_bracket.1);
    }

    #[test]
    fn crossover_needs_a_bracket() {
        let a = [2.0, 3.0, 4.0];
        let f: Vec<f64> = a.iter().map(|a| a / (1.0 + a)).collect();
        let err = detect_crossover(&SweepResult::from_curve(&a, &f, 1.0)).unwrap_err();
        assert!(err.to_string().contains("sweep range too narrow"));
    }

    #[test]
    fn crossover_rejects_decreasing_flux() {
        let a = [0.1, 1.0, 10.0];
        let f = [0.2, 0.7, 0.6];
        assert!(detect_crossover(&SweepResult::from_curve(&a, &f, 1.0)).is_err());
    }

    #[test]
    fn a_list_validation() {
        let d = square_with_source();
        let cfg = SweepConfig {
            h: Some(1.0 / 32.0),
            ..Default::default()
        };
        assert!(sweep_a(&d, &[1.0, 0.5], Method::Fd, &cfg).is_err());
        assert!(sweep_a(&d, &[-1.0], Method::Fd, &cfg).is_err());
        assert!(sweep_a(&d, &[], Method::Fd, &cfg).is_err());
        assert!(sweep_a(&d, &[1.0], Method::Fd, &SweepConfig::default()).is_err());
        assert!(sweep_a(&d, &[1.0], Method::Mc, &SweepConfig::default()).is_err());
    }

    #[test]
    fn zero_a_row_has_zero_flux() {
        let d = square_with_source();
        let cfg = SweepConfig {
            h: Some(1.0 / 32.0),
            ..Default::default()
        };
        let s = sweep_a(&d, &[0.0], Method::Fd, &cfg).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].flux, Some(0.0));
        assert_eq!(s.rows[0].status, RowStatus::Ok);
    }

    #[test]
    fn spacing_divides_every_generation() {
        for g in 0..4 {
            let h = common_spacing(1.0, g);
            assert!(h <= 1.0 / 64.0);
            for k in 0..=g {
                let m = 4f64.powi(-(k as i32)) / h;
                assert!((m - m.round()).abs() < 1e-9 && m.round() >= 2.0);
            }
        }
    }

    #[test]
    fn fd_sweep_needs_quadratic_family() {
        let r = emphysema_sweep(
            PrefractalFamily::TriadicKochSnowflake,
            1.0,
            &[0, 1],
            1.0,
            Method::Fd,
            &SweepConfig::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn robin_default_strength() {
        let d = DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0))
            .unwrap();
        assert_eq!(AbsorptionMode::default_robin(&d).a(), 2.5);
    }
}
