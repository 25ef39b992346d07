//! File formats: geometry JSON, hit/field/flux/sweep CSVs and JSON sidecars.
//!
//! Every CSV starts with a `# robinlab <version> config=<hash>` line; readers
//! skip `#` lines. Floats are written in shortest round-trip form, so equal
//! inputs give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{DimensionReport, SweepResult};
use crate::fd::{FluxProfile, ScalarField};
use crate::geometry::{DomainSpec, Point2, Polygon, PrefractalFamily, PrefractalSpec, SourceSpec};
use crate::measure::ScalingFit;
use crate::walk::{OutcomeKind, WalkOutcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 12 hex digits of the SHA-256 of the value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(format!("{digest:x}")[..12].to_string())
}

/// `{kind}-{domain}-{hash}.{ext}` inside `dir`.
pub fn output_path(dir: &Path, kind: &str, domain: &str, hash: &str, ext: &str) -> PathBuf {
    dir.join(format!("{kind}-{domain}-{hash}.{ext}"))
}

fn provenance(hash: &str) -> String {
    format!("# robinlab {VERSION} config={hash}\n")
}

fn csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(provenance(hash).as_bytes())?;
    Ok(csv::Writer::from_writer(out))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?)
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceJson {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl From<SourceSpec> for SourceJson {
    fn from(s: SourceSpec) -> Self {
        SourceJson {
            cx: s.center.x,
            cy: s.center.y,
            r: s.radius,
        }
    }
}

impl From<SourceJson> for SourceSpec {
    fn from(s: SourceJson) -> Self {
        SourceSpec {
            center: Point2::new(s.cx, s.cy),
            radius: s.r,
        }
    }
}

/// Geometry file: either a prefractal (`family`, `generation`,
/// `base_scale`, plus `n_sides` for disk polygons) or explicit `vertices`;
/// `source` is optional.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sides: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceJson>,
    /// Written by the CLI; ignored when the geometry is read back.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: &str) -> Self {
        Self {
            version: VERSION.to_string(),
            config_hash: config_hash.to_string(),
        }
    }
}

pub fn parse_family(name: &str, n_sides: Option<u32>) -> Result<PrefractalFamily> {
    match (name, n_sides) {
        ("triadic-koch-snowflake", None) => Ok(PrefractalFamily::TriadicKochSnowflake),
        ("quadratic-koch-island", None) => Ok(PrefractalFamily::QuadraticKochIsland),
        ("square", None) => Ok(PrefractalFamily::Square),
        ("disk-polygon", Some(n)) => Ok(PrefractalFamily::DiskPolygon { n_sides: n }),
        ("disk-polygon", None) => Err(Error::Config("disk-polygon needs n_sides".into())),
        (_, Some(_)) => Err(Error::Config(format!("n_sides does not apply to family {name}"))),
        _ => Err(Error::Config(format!(
            "unknown family {name:?}; expected triadic-koch-snowflake, \
             quadratic-koch-island, square or disk-polygon"
        ))),
    }
}

impl GeometryFile {
    pub fn from_prefractal(spec: &PrefractalSpec, source: Option<SourceSpec>) -> Self {
        let n_sides = match spec.family {
            PrefractalFamily::DiskPolygon { n_sides } => Some(n_sides),
            _ => None,
        };
        GeometryFile {
            family: Some(spec.family.name().to_string()),
            generation: Some(spec.generation),
            base_scale: Some(spec.base_scale),
            n_sides,
            vertices: None,
            source: source.map(SourceJson::from),
            provenance: None,
        }
    }

    pub fn from_domain(domain: &DomainSpec) -> Self {
        match domain.prefractal() {
            Some(p) => Self::from_prefractal(p, domain.source().copied()),
            None => GeometryFile {
                vertices: Some(domain.outer().vertices().iter().map(|v| [v.x, v.y]).collect()),
                source: domain.source().copied().map(SourceJson::from),
                ..Default::default()
            },
        }
    }

    pub fn prefractal(&self) -> Result<Option<PrefractalSpec>> {
        match (&self.family, &self.vertices) {
            (Some(_), Some(_)) => Err(Error::Config(
                "geometry gives both a family and explicit vertices".into(),
            )),
            (Some(name), None) => {
                let family = parse_family(name, self.n_sides)?;
                let generation = self
                    .generation
                    .ok_or_else(|| Error::Config("geometry is missing generation".into()))?;
                let base_scale = self
                    .base_scale
                    .ok_or_else(|| Error::Config("geometry is missing base_scale".into()))?;
                let spec = PrefractalSpec::new(family, generation, base_scale);
                spec.validate()?;
                Ok(Some(spec))
            }
            (None, Some(_)) => {
                if self.generation.is_some() || self.base_scale.is_some() || self.n_sides.is_some() {
                    return Err(Error::Config(
                        "generation, base_scale and n_sides need a family".into(),
                    ));
                }
                Ok(None)
            }
            (None, None) => Err(Error::Config(
                "geometry needs either a family or vertices".into(),
            )),
        }
    }

    pub fn to_domain(&self) -> Result<DomainSpec> {
        let source = self.source.map(SourceSpec::from);
        match self.prefractal()? {
            Some(spec) => DomainSpec::from_prefractal(spec)?.with_source(source),
            None => {
                let verts = self
                    .vertices
                    .as_ref()
                    .expect("checked by prefractal()")
                    .iter()
                    .map(|&[x, y]| Point2::new(x, y))
                    .collect();
                DomainSpec::new(Polygon::new(verts)?, source, None)
            }
        }
    }
}

/// One line of a hits CSV. `arc` and `edge_id` are empty unless absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub walk_id: u64,
    pub outcome: String,
    pub arc: Option<f64>,
    pub edge_id: Option<usize>,
    pub reflections: u64,
    pub steps: u64,
}

pub fn hit_rows(outcomes: &[WalkOutcome]) -> Vec<HitRow> {
    outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| HitRow {
            walk_id: i as u64,
            outcome: o.kind.as_str().to_string(),
            arc: o.hit.map(|h| h.arc),
            edge_id: o.hit.map(|h| h.edge_id),
            reflections: o.reflections,
            steps: o.steps,
        })
        .collect()
}

pub fn write_hits(path: &Path, hash: &str, rows: &[HitRow]) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["walk_id", "outcome", "arc", "edge_id", "reflections", "steps"])?;
    for r in rows {
        w.write_record([
            r.walk_id.to_string(),
            r.outcome.clone(),
            opt(r.arc),
            opt(r.edge_id),
            r.reflections.to_string(),
            r.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hits(path: &Path) -> Result<Vec<HitRow>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let expected = ["walk_id", "outcome", "arc", "edge_id", "reflections", "steps"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Config(format!(
            "{} is not a hits file: columns {:?}, expected {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: HitRow = rec?;
        if OutcomeKind::parse(&row.outcome).is_none() {
            return Err(Error::Config(format!("unknown outcome {:?}", row.outcome)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Arc coordinates of the absorbed rows.
pub fn absorbed_arcs(rows: &[HitRow]) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.outcome == OutcomeKind::AbsorbedAt.as_str())
        .filter_map(|r| r.arc)
        .collect()
}

/// `i, j, x, y, kind, value` for every cell.
pub fn write_field(path: &Path, hash: &str, field: &ScalarField) -> Result<()> {
    let g = &field.grid;
    let mut w = csv_writer(path, hash)?;
    w.write_record(["i", "j", "x", "y", "kind", "value"])?;
    for c in 0..g.kinds.len() {
        let (i, j) = g.coords(c);
        let p = g.center(c);
        w.write_record([
            i.to_string(),
            j.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            g.kinds[c].as_str().to_string(),
            field.values[c].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flux(path: &Path, hash: &str, profile: &FluxProfile) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["arc_start", "arc_end", "phi", "edge_id"])?;
    for f in &profile.faces {
        w.write_record([
            f.arc_start.to_string(),
            f.arc_end.to_string(),
            f.phi.to_string(),
            f.edge_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_COLUMNS: [&str; 17] = [
    "index",
    "a",
    "generation",
    "perimeter",
    "F",
    "F_dirichlet",
    "source_flux",
    "min_boundary_u",
    "u_probe",
    "u_stderr",
    "mean_reflections",
    "timeouts",
    "iterations",
    "residual",
    "seed",
    "status",
    "message",
];

pub fn write_sweep(path: &Path, hash: &str, sweep: &SweepResult) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in &sweep.rows {
        w.write_record([
            r.index.to_string(),
            r.a.to_string(),
            opt(r.generation),
            r.perimeter.to_string(),
            opt(r.flux),
            opt(r.flux_dirichlet),
            opt(r.source_flux),
            opt(r.min_boundary_u),
            opt(r.u_probe),
            opt(r.u_stderr),
            opt(r.mean_reflections),
            opt(r.timeouts),
            opt(r.iterations),
            opt(r.residual),
            opt(r.seed),
            r.status.as_str().to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per absorption mode of a dimension comparison.
pub fn write_dimension_table(path: &Path, hash: &str, report: &DimensionReport) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record([
        "mode", "a", "D1", "stderr", "r2", "n_walks", "hits", "timeouts", "mean_reflections", "seed",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.mode.name().to_string(),
            r.mode.a().to_string(),
            r.fit.exponent.to_string(),
            r.fit.stderr.to_string(),
            r.fit.r_squared.to_string(),
            r.n_walks.to_string(),
            r.hits.to_string(),
            r.timeouts.to_string(),
            r.mean_reflections.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(ln_s, entropy)` pairs of a fit, for plotting the regression.
pub fn write_scaling_pairs(path: &Path, hash: &str, fit: &ScalingFit) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["ln_s", "entropy"])?;
    for (x, y) in &fit.points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
