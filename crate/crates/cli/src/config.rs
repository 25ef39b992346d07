//! Run configuration: a JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use robinlab::io::GeometryFile;
use robinlab::{Error, Result};
use serde::{Deserialize, Serialize};

/// An absorption strength: a number, or `"inf"` / `"dirichlet"` for `a = ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AValue {
    Num(f64),
    Text(TextA),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextA {
    Inf,
    Infinity,
    Dirichlet,
}

impl AValue {
    pub fn value(&self) -> f64 {
        match self {
            AValue::Num(x) => *x,
            AValue::Text(_) => f64::INFINITY,
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            AValue::Text(TextA::Inf)
        } else {
            AValue::Num(x)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Path(PathBuf),
    Inline(GeometryFile),
}

/// Every knob of every subcommand; each subcommand reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<AValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_list: Option<Vec<AValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_walks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perimeter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_occupied: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generations: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quiet: Option<bool>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected X,Y, got {s:?}"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

/// Flags shared by all subcommands. Any flag given here wins over the
/// config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (the ROBINLAB_OUT environment variable takes precedence).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; changes speed only, never results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,

    /// Geometry JSON file.
    #[arg(long, global = true)]
    pub geometry: Option<PathBuf>,
    /// Prefractal family (triadic-koch-snowflake, quadratic-koch-island, square, disk-polygon).
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long, global = true)]
    pub generation: Option<u32>,
    #[arg(long, global = true)]
    pub base_scale: Option<f64>,
    #[arg(long, global = true)]
    pub n_sides: Option<u32>,

    /// Absorption strength; `inf` for Dirichlet.
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub a_list: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub n_walks: Option<u64>,
    #[arg(long, global = true)]
    pub max_steps: Option<u64>,
    #[arg(long, global = true, value_parser = parse_point, allow_hyphen_values = true)]
    pub start: Option<[f64; 2]>,
    #[arg(long, global = true, value_parser = parse_point, allow_hyphen_values = true)]
    pub probe: Option<[f64; 2]>,
    #[arg(long, global = true, value_parser = parse_point, allow_hyphen_values = true)]
    pub pole: Option<[f64; 2]>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub qs: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub perimeter: Option<f64>,
    /// Hits CSV to analyze.
    #[arg(long, global = true)]
    pub hits: Option<PathBuf>,
    /// `ambient` or `arc`.
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    #[arg(long, global = true)]
    pub min_occupied: Option<usize>,
    /// Walk mode: `measure` (boundary hits) or `estimate` (u at the start point).
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// `fd` or `mc`.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Sweep kind: `a`, `generation` or `dimension`.
    #[arg(long, global = true)]
    pub experiment: Option<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub generations: Option<Vec<u32>>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// `cg` or `sor`.
    #[arg(long, global = true)]
    pub solver: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        // Relative paths in a config file are relative to that file.
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(GeometrySource::Path(p)) = &mut cfg.geometry {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.hits {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Config file (if any) overridden by flags, then by `ROBINLAB_OUT`.
    pub fn resolve(command: &str, flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(c) = &cfg.command {
            if c != command {
                return Err(Error::Config(format!(
                    "config is for the {c:?} command, not {command:?}"
                )));
            }
        }
        cfg.command = Some(command.to_string());

        if let Some(p) = &flags.geometry {
            cfg.geometry = Some(GeometrySource::Path(p.clone()));
        }
        let prefractal_flags = flags.family.is_some()
            || flags.generation.is_some()
            || flags.base_scale.is_some()
            || flags.n_sides.is_some();
        if prefractal_flags {
            if flags.geometry.is_some() {
                return Err(Error::Config(
                    "--geometry cannot be combined with --family/--generation/--base-scale".into(),
                ));
            }
            let mut g = match &cfg.geometry {
                Some(GeometrySource::Inline(g)) if g.family.is_some() => g.clone(),
                _ => GeometryFile::default(),
            };
            if flags.family.is_some() {
                g.family = flags.family.clone();
            }
            g.generation = flags.generation.or(g.generation).or(Some(0));
            g.base_scale = flags.base_scale.or(g.base_scale).or(Some(1.0));
            g.n_sides = flags.n_sides.or(g.n_sides);
            cfg.geometry = Some(GeometrySource::Inline(g));
        }

        macro_rules! take {
            ($field:ident) => {
                if flags.$field.is_some() {
                    cfg.$field = flags.$field.clone();
                }
            };
        }
        take!(seed);
        take!(out);
        take!(threads);
        take!(h);
        take!(eps);
        take!(n_walks);
        take!(max_steps);
        take!(start);
        take!(probe);
        take!(pole);
        take!(scales);
        take!(qs);
        take!(perimeter);
        take!(hits);
        take!(estimator);
        take!(min_occupied);
        take!(mode);
        take!(method);
        take!(experiment);
        take!(generations);
        take!(tol);
        take!(max_iter);
        take!(solver);
        if let Some(a) = flags.a {
            cfg.a = Some(AValue::from_f64(a));
        }
        if let Some(list) = &flags.a_list {
            cfg.a_list = Some(list.iter().map(|&a| AValue::from_f64(a)).collect());
        }
        if flags.quiet {
            cfg.quiet = Some(true);
        }
        if let Ok(dir) = std::env::var("ROBINLAB_OUT") {
            if !dir.is_empty() {
                cfg.out = Some(PathBuf::from(dir));
            }
        }
        Ok(cfg)
    }

    /// The part of the configuration that determines the results; its hash
    /// names the output files.
    pub fn hashed(&self) -> RunConfig {
        RunConfig {
            out: None,
            threads: None,
            quiet: None,
            ..self.clone()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn quiet(&self) -> bool {
        self.quiet.unwrap_or(false)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn geometry_file(&self) -> Result<GeometryFile> {
        match &self.geometry {
            None => Err(Error::Config(
                "no geometry given (use --geometry, --family or the config's \"geometry\")".into(),
            )),
            Some(GeometrySource::Inline(g)) => Ok(g.clone()),
            Some(GeometrySource::Path(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read geometry {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("geometry {}: {e}", p.display())))
            }
        }
    }

    pub fn require<T: Clone>(&self, value: &Option<T>, name: &str) -> Result<T> {
        value
            .clone()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<RunConfig, _> = serde_json::from_str(r#"{"a": 1, "colour": 2}"#);
        assert!(r.is_err());
    }

    #[test]
    fn a_accepts_inf() {
        let c: RunConfig = serde_json::from_str(r#"{"a": "inf", "a_list": [0.1, "dirichlet"]}"#).unwrap();
        assert_eq!(c.a.unwrap().value(), f64::INFINITY);
        assert_eq!(c.a_list.unwrap()[0].value(), 0.1);
    }

    #[test]
    fn flags_win() {
        let flags = Flags {
            seed: Some(7),
            a: Some(2.0),
            ..Default::default()
        };
        let c = RunConfig::resolve("walk", &flags).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.a, Some(AValue::Num(2.0)));
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.5,-1").unwrap(), [0.5, -1.0]);
        assert!(parse_point("1").is_err());
    }
}
