use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use robinlab::experiments::{
    self, AbsorptionMode, DimensionConfig, Method, SweepConfig, SweepResult,
};
use robinlab::fd::{self, CellKind, SolverConfig, SolverMethod};
use robinlab::geometry::{similarity_dimension, DomainSpec, Point2};
use robinlab::io::{self, GeometryFile};
use robinlab::measure::{self, EstimatorOptions, DEFAULT_MIN_OCCUPIED};
use robinlab::walk::{self, SourceMode, WalkConfig, TIMEOUT_WARN_FRACTION};
use robinlab::{Error, Result};
use serde_json::{json, Value};

use crate::config::{AValue, RunConfig};

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn new(cfg: RunConfig) -> Result<Self> {
        let hash = io::config_hash(&cfg.hashed())?;
        let out = cfg.out_dir();
        std::fs::create_dir_all(&out)?;
        Ok(Ctx { cfg, hash, out })
    }

    fn path(&self, kind: &str, domain: &str, ext: &str) -> PathBuf {
        io::output_path(&self.out, kind, domain, &self.hash, ext)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.cfg.quiet() {
            println!("{}", msg.as_ref());
        }
    }

    fn wrote(&self, path: &Path) {
        self.say(format!("wrote {}", path.display()));
    }

    /// Sidecar with provenance fields added to `body`.
    fn sidecar(&self, path: &Path, mut body: Value) -> Result<()> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let obj = body.as_object_mut().expect("sidecar body is an object");
        obj.insert("version".into(), json!(io::VERSION));
        obj.insert("config_hash".into(), json!(self.hash));
        obj.insert("config".into(), serde_json::to_value(self.cfg.hashed())?);
        obj.insert("created_unix".into(), json!(created));
        io::write_json(path, &body)?;
        self.wrote(path);
        Ok(())
    }
}

fn point(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

/// Shortest decimal with at most four places: 8 → "8", 16/3 → "5.3333".
fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn a_json(a: f64) -> Value {
    serde_json::to_value(AValue::from_f64(a)).expect("plain value")
}

fn domain(cfg: &RunConfig) -> Result<DomainSpec> {
    cfg.geometry_file()?.to_domain()
}

fn domain_with_source(cfg: &RunConfig) -> Result<DomainSpec> {
    let d = domain(cfg)?;
    if d.source().is_some() {
        Ok(d)
    } else {
        d.with_default_source()
    }
}

fn solver_config(cfg: &RunConfig) -> Result<SolverConfig> {
    let mut s = SolverConfig::default();
    if let Some(t) = cfg.tol {
        s.tol = t;
    }
    if let Some(m) = cfg.max_iter {
        s.max_iter = m;
    }
    if let Some(name) = &cfg.solver {
        s.method = match name.as_str() {
            "cg" | "conjugate-gradient" => SolverMethod::ConjugateGradient,
            "sor" | "successive-over-relaxation" => SolverMethod::SuccessiveOverRelaxation,
            other => return Err(Error::Config(format!("unknown solver {other:?}; use cg or sor"))),
        };
    }
    s.validate()?;
    Ok(s)
}

fn walk_config(cfg: &RunConfig, d: &DomainSpec) -> WalkConfig {
    let mut w = WalkConfig::for_domain(d);
    if let Some(eps) = cfg.eps {
        w = w.with_eps(eps);
    }
    if let Some(m) = cfg.max_steps {
        w.max_steps = m;
    }
    w
}

fn method(cfg: &RunConfig) -> Result<Method> {
    match cfg.method.as_deref() {
        None | Some("fd") => Ok(Method::Fd),
        Some("mc") => Ok(Method::Mc),
        Some(other) => Err(Error::Config(format!("unknown method {other:?}; use fd or mc"))),
    }
}

fn estimator_options(cfg: &RunConfig) -> EstimatorOptions {
    EstimatorOptions {
        min_occupied: cfg.min_occupied.unwrap_or(DEFAULT_MIN_OCCUPIED),
        min_feature: None,
    }
}

pub fn geometry(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let g = ctx.cfg.geometry_file()?;
    let d = g.to_domain()?;
    let dim = d.prefractal().map(similarity_dimension).unwrap_or(1.0);
    let path = ctx.path("geometry", &d.label(), "json");
    let file = GeometryFile {
        provenance: Some(io::Provenance::new(&ctx.hash)),
        ..GeometryFile::from_domain(&d)
    };
    io::write_json(&path, &file)?;
    ctx.say(format!(
        "{} edges, perimeter {}, similarity dimension {}",
        d.edge_count(),
        short(d.perimeter()),
        short(dim)
    ));
    ctx.wrote(&path);
    Ok(())
}

pub fn solve(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let d = domain_with_source(c)?;
    let h = c.require(&c.h, "h")?;
    let a = c.require(&c.a, "a")?.value();
    let solver = solver_config(c)?;
    let grid = Arc::new(fd::rasterize(&d, h)?);
    let field = fd::solve_robin(&grid, a, &solver)?;
    let flux = fd::flux_total(&field)?;
    let profile = fd::flux_profile(&field)?;
    let label = d.label();
    let field_path = ctx.path("field", &label, "csv");
    io::write_field(&field_path, &ctx.hash, &field)?;
    ctx.wrote(&field_path);
    let flux_path = ctx.path("flux", &label, "csv");
    io::write_flux(&flux_path, &ctx.hash, &profile)?;
    ctx.wrote(&flux_path);
    ctx.sidecar(
        &ctx.path("solve", &label, "json"),
        json!({
            "domain": label,
            "h": h,
            "a": a_json(a),
            "tol": solver.tol,
            "method": solver.method,
            "iterations": field.report.iterations,
            "residual": field.report.residual,
            "F": flux.total,
            "source_flux": flux.source_flux,
            "conservation_mismatch": flux.mismatch,
            "conservation_ok": flux.mismatch <= 0.01,
            "min_boundary_u": field.min_boundary_value(),
            "warnings": field.report.warnings,
        }),
    )?;
    ctx.say(format!("F = {}  (source flux {})", flux.total, flux.source_flux));
    Ok(())
}

pub fn walk(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let a = c.require(&c.a, "a")?.value();
    let n = c.n_walks.unwrap_or(10_000);
    let seed = c.seed();
    let mode = c.mode.as_deref().unwrap_or("measure");
    let (d, outcomes) = match mode {
        "measure" => {
            let d = domain(c)?;
            let start = c.start.map(point).unwrap_or_else(|| d.centroid());
            let w = walk_config(c, &d);
            let o = walk::measure_walks(&d, start, a, n, &w, seed)?;
            (d, o)
        }
        "estimate" => {
            let d = domain_with_source(c)?;
            let start = point(c.require(&c.start, "start")?);
            let w = walk_config(c, &d).with_source_mode(SourceMode::Target);
            let o = walk::run_walks(&d, start, a, n, &w, seed)?;
            (d, o)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown walk mode {other:?}; use measure or estimate"
            )))
        }
    };
    let w = walk_config(c, &d);
    let rows = io::hit_rows(&outcomes);
    let label = d.label();
    let hits_path = ctx.path("hits", &label, "csv");
    io::write_hits(&hits_path, &ctx.hash, &rows)?;
    ctx.wrote(&hits_path);
    let summary = walk::summarize_u(&outcomes);
    let mut body = json!({
        "domain": label,
        "mode": mode,
        "seed": seed,
        "eps": w.eps,
        "a": a_json(a),
        "n_walks": n,
        "timeout_count": summary.timeouts,
        "mean_reflections": summary.mean_reflections,
    });
    if mode == "estimate" {
        body["u"] = json!(summary.mean);
        body["stderr"] = json!(summary.stderr);
        ctx.say(format!("u = {:.4} ± {:.4}", summary.mean, summary.stderr));
    } else {
        ctx.say(format!("{} of {n} walks absorbed", summary.absorbed));
    }
    ctx.sidecar(&ctx.path("hits", &label, "json"), body)?;
    if summary.timeouts as f64 > TIMEOUT_WARN_FRACTION * n as f64 {
        return Err(Error::TimeoutBudget(format!(
            "{} of {n} walks hit the step cap",
            summary.timeouts
        )));
    }
    Ok(())
}

pub fn measure(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let hits_path = c.require(&c.hits, "hits")?;
    let rows = io::read_hits(&hits_path)?;
    let arcs = io::absorbed_arcs(&rows);
    let d = match &c.geometry {
        Some(_) => Some(domain(c)?),
        None => None,
    };
    let opts = estimator_options(c);
    let estimator = c
        .estimator
        .clone()
        .unwrap_or_else(|| if d.is_some() { "ambient".into() } else { "arc".into() });
    let (label, qs, fits) = match estimator.as_str() {
        "ambient" => {
            let d = d.ok_or_else(|| {
                Error::Config("the ambient estimator needs the geometry".into())
            })?;
            if c.qs.as_ref().is_some_and(|q| q != &[1.0]) {
                return Err(Error::Config("the ambient estimator supports q = 1 only".into()));
            }
            let scales = match (&c.scales, d.prefractal()) {
                (Some(s), _) => s.clone(),
                (None, Some(p)) => experiments::default_window(p),
                (None, None) => return Err(Error::Config("missing parameter scales".into())),
            };
            let pts: Vec<Point2> = arcs.iter().map(|&s| d.point_at_arc(s).0).collect();
            let fit = measure::arc_to_ambient(&pts, &d, &scales, &opts)?;
            (d.label(), vec![1.0], vec![fit])
        }
        "arc" => {
            let perimeter = match (&d, c.perimeter) {
                (_, Some(p)) => p,
                (Some(d), None) => d.perimeter(),
                (None, None) => {
                    return Err(Error::Config(
                        "the arc estimator needs the geometry or a perimeter".into(),
                    ))
                }
            };
            let qs = c.qs.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]);
            let scales = c
                .scales
                .clone()
                .unwrap_or_else(|| (4..=10).map(|j| perimeter * 0.5f64.powi(j)).collect());
            let spec = measure::lq_spectrum(&arcs, perimeter, &qs, &scales, &opts)?;
            let label = d.map(|d| d.label()).unwrap_or_else(|| "hits".into());
            (label, spec.qs, spec.fits)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown estimator {other:?}; use ambient or arc"
            )))
        }
    };
    let scales = fits[0].scales_used.clone();
    let main = qs.iter().position(|&q| q == 1.0).unwrap_or(0);
    let pairs_path = ctx.path("scaling", &label, "csv");
    io::write_scaling_pairs(&pairs_path, &ctx.hash, &fits[main])?;
    ctx.wrote(&pairs_path);
    for (q, f) in qs.iter().zip(&fits) {
        ctx.say(format!("D_{q} = {:.4} ± {:.4}  (r² {:.4})", f.exponent, f.stderr, f.r_squared));
    }
    ctx.sidecar(
        &ctx.path("measure", &label, "json"),
        json!({
            "estimator": estimator,
            "qs": qs,
            "scales": scales,
            "exponents": fits.iter().map(|f| f.exponent).collect::<Vec<_>>(),
            "stderrs": fits.iter().map(|f| f.stderr).collect::<Vec<_>>(),
            "r2": fits.iter().map(|f| f.r_squared).collect::<Vec<_>>(),
            "window": [scales.last(), scales.first()],
            "n_hits": arcs.len(),
        }),
    )
}

pub fn sweep(cfg: RunConfig) -> Result<()> {
    let experiment = cfg.experiment.clone().unwrap_or_else(|| "a".into());
    match experiment.as_str() {
        "a" => sweep_a(cfg),
        "generation" => sweep_generation(cfg),
        "dimension" => sweep_dimension(cfg),
        other => Err(Error::Config(format!(
            "unknown experiment {other:?}; use a, generation or dimension"
        ))),
    }
}

fn sweep_config(c: &RunConfig) -> Result<SweepConfig> {
    Ok(SweepConfig {
        h: c.h,
        solver: solver_config(c)?,
        eps: c.eps,
        n_walks: c.n_walks.unwrap_or(10_000),
        probe: c.probe.map(point),
        seed: c.seed(),
    })
}

fn write_sweep(ctx: &Ctx, sweep: &SweepResult, extra: Value) -> Result<()> {
    let path = ctx.path(&sweep.meta.experiment, &sweep.meta.domain, "csv");
    io::write_sweep(&path, &ctx.hash, sweep)?;
    ctx.wrote(&path);
    let mut body = json!({ "meta": sweep.meta, "failed_rows": sweep.failed_rows() });
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    ctx.sidecar(&path.with_extension("json"), body)?;
    if sweep.failed_rows() > 0 {
        ctx.say(format!("{} rows did not pass; see the status column", sweep.failed_rows()));
    }
    Ok(())
}

fn sweep_a(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let d = domain_with_source(c)?;
    let a_list: Vec<f64> = c.require(&c.a_list, "a_list")?.iter().map(AValue::value).collect();
    let m = method(c)?;
    let sweep = experiments::sweep_a(&d, &a_list, m, &sweep_config(c)?)?;
    let mut extra = json!({});
    if m == Method::Fd {
        match experiments::detect_crossover(&sweep) {
            Ok(x) => {
                let path = ctx.path("crossover", &sweep.meta.domain, "json");
                io::write_json(&path, &x)?;
                ctx.wrote(&path);
                ctx.say(format!("a* = {}", x.a_star));
                extra = json!({ "crossover": x });
            }
            Err(e) => extra = json!({ "crossover": null, "crossover_error": e.to_string() }),
        }
    }
    write_sweep(&ctx, &sweep, extra)
}

fn sweep_generation(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let g = c.geometry_file()?;
    let spec = g
        .prefractal()?
        .ok_or_else(|| Error::Config("a generation sweep needs a prefractal family".into()))?;
    let generations = c.require(&c.generations, "generations")?;
    let a = c.require(&c.a, "a")?.value();
    let sweep = experiments::emphysema_sweep(
        spec.family,
        spec.base_scale,
        &generations,
        a,
        method(c)?,
        &sweep_config(c)?,
    )?;
    write_sweep(&ctx, &sweep, json!({}))
}

fn sweep_dimension(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let d = domain(c)?;
    let robin = match c.a {
        Some(a) => AbsorptionMode::Robin { a: a.value() },
        None => AbsorptionMode::default_robin(&d),
    };
    let dcfg = DimensionConfig {
        n_walks: c.n_walks.unwrap_or(100_000),
        seed: c.seed(),
        eps: c.eps,
        scales: c.scales.clone(),
        estimator: estimator_options(c),
    };
    let report = experiments::dimension_experiment(&d, &[AbsorptionMode::Dirichlet, robin], &dcfg)?;
    let label = report.domain.clone();
    let table = ctx.path("dimension", &label, "csv");
    io::write_dimension_table(&table, &ctx.hash, &report)?;
    ctx.wrote(&table);
    for row in &report.rows {
        let path = ctx.path(&format!("scaling-{}", row.mode.name()), &label, "csv");
        io::write_scaling_pairs(&path, &ctx.hash, &row.fit)?;
        ctx.wrote(&path);
        ctx.say(format!(
            "{}: D1 = {:.4} ± {:.4}",
            row.mode.name(),
            row.fit.exponent,
            row.fit.stderr
        ));
    }
    ctx.sidecar(
        &table.with_extension("json"),
        json!({ "report": report, "separation": report.separation(0, 1) }),
    )
}

pub fn green(cfg: RunConfig) -> Result<()> {
    let ctx = Ctx::new(cfg)?;
    let c = &ctx.cfg;
    let d = domain(c)?.with_source(None)?;
    let h = c.require(&c.h, "h")?;
    let a = c.require(&c.a, "a")?.value();
    let solver = solver_config(c)?;
    let grid = Arc::new(fd::rasterize(&d, h)?);
    let pole_pt = c.pole.map(point).unwrap_or_else(|| d.centroid());
    let pole = grid
        .cell_at(pole_pt)
        .filter(|&k| grid.kinds[k] == CellKind::Interior)
        .ok_or_else(|| {
            Error::Domain(format!(
                "pole ({}, {}) is not in an interior cell",
                pole_pt.x, pole_pt.y
            ))
        })?;
    let field = fd::solve_green(&grid, pole, a, &solver)?;
    let label = d.label();
    let path = ctx.path("green", &label, "csv");
    io::write_field(&path, &ctx.hash, &field)?;
    ctx.wrote(&path);
    ctx.sidecar(
        &ctx.path("green", &label, "json"),
        json!({
            "domain": label,
            "h": h,
            "a": a_json(a),
            "pole_cell": pole,
            "pole": [pole_pt.x, pole_pt.y],
            "tol": solver.tol,
            "iterations": field.report.iterations,
            "residual": field.report.residual,
            "warnings": field.report.warnings,
        }),
    )
}
