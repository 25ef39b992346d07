//! Partially reflected Brownian motion.
//!
//! Away from the boundary the walk moves by walk-on-spheres jumps. Once it is
//! within `eps` of ∂Ω it is absorbed with probability `p = aε/(1 + aε)`;
//! otherwise it is pushed a distance `eps` along the inward normal of the
//! nearest edge and the walk continues. With `a = ∞` every boundary encounter
//! absorbs and the hitting law is the classical harmonic measure; with finite
//! `a` the absorption law is the Robin harmonic measure.
//!
//! Every walk draws from its own ChaCha stream keyed by `(seed, walk index)`,
//! so batch results do not depend on how rayon schedules the walks.
//!
//! The estimator has an `O(eps)` bias coming from the stopping layer.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance_sq, BoundaryDistance, DomainSpec, Point2};

/// Default cap on sphere jumps per walk.
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;
/// Smallest accepted `max_steps`.
pub const MIN_MAX_STEPS: u64 = 1_000;
/// Attempts at the reentrant-corner fallback before giving up on a walk.
const FALLBACK_TRIES: usize = 16;
/// Consecutive boundary encounters without a jump before a walk is declared stuck.
const MAX_STALLED_REFLECTIONS: u32 = 64;
/// Timeout fraction above which estimates carry a warning.
pub const TIMEOUT_WARN_FRACTION: f64 = 0.01;

/// Absorption probability per boundary encounter for Robin strength `a` and
/// layer width `eps`: the solution of `p / (1 - p) = a·eps`.
pub fn absorption_probability(a: f64, eps: f64) -> Result<f64> {
    if a.is_nan() || a < 0.0 {
        return Err(Error::Config(format!("absorption strength must be >= 0, got {a}")));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("eps must be finite and positive, got {eps}")));
    }
    if a.is_infinite() {
        return Ok(1.0);
    }
    let ae = a * eps;
    Ok(ae / (1.0 + ae))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    /// The source disk stops the walk (`HitSource`).
    Target,
    /// The source is ignored; walks end only by absorption or timeout.
    Absent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub eps: f64,
    pub shrink: f64,
    pub max_steps: u64,
    pub source_mode: SourceMode,
}

impl WalkConfig {
    /// Defaults for `domain`: `eps` is an eighth of the shortest edge, capped
    /// at half the source radius, and the source is a target whenever the
    /// domain has one.
    pub fn for_domain(domain: &DomainSpec) -> Self {
        let mut eps = domain.outer().shortest_edge() / 8.0;
        if let Some(s) = domain.source() {
            eps = eps.min(s.radius / 2.0);
        }
        Self {
            eps,
            shrink: 0.99,
            max_steps: DEFAULT_MAX_STEPS,
            source_mode: if domain.source().is_some() {
                SourceMode::Target
            } else {
                SourceMode::Absent
            },
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_source_mode(mut self, mode: SourceMode) -> Self {
        self.source_mode = mode;
        self
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if self.max_steps < MIN_MAX_STEPS {
            return Err(Error::Config(format!(
                "max_steps must be at least {MIN_MAX_STEPS}, got {}",
                self.max_steps
            )));
        }
        let shortest = domain.outer().shortest_edge();
        if self.eps >= shortest {
            return Err(Error::Config(format!(
                "eps = {} must be below the shortest boundary edge {shortest}",
                self.eps
            )));
        }
        if self.source_mode == SourceMode::Target {
            match domain.source() {
                None => {
                    return Err(Error::Config(
                        "source_mode = target but the domain has no source".into(),
                    ))
                }
                Some(s) if self.eps >= s.radius => {
                    return Err(Error::Config(format!(
                        "eps = {} must be below the source radius {}",
                        self.eps, s.radius
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Absorption site of a walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub point: Point2,
    pub edge_id: usize,
    pub arc: f64,
    pub reflections: u64,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    AbsorbedAt,
    HitSource,
    Timeout,
}

impl OutcomeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::AbsorbedAt => "absorbed",
            OutcomeKind::HitSource => "source",
            OutcomeKind::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "absorbed" => Some(OutcomeKind::AbsorbedAt),
            "source" => Some(OutcomeKind::HitSource),
            "timeout" => Some(OutcomeKind::Timeout),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkOutcome {
    pub kind: OutcomeKind,
    /// Present exactly when `kind == AbsorbedAt`.
    pub hit: Option<HitRecord>,
    pub reflections: u64,
    pub steps: u64,
}

/// Uniformly distributed unit vector, by rejection from the square.
#[inline]
fn unit_vector(rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let r2 = u * u + v * v;
        if r2 > 1e-12 && r2 <= 1.0 {
            // (u + iv)^2 / |u + iv|^2 has a uniform angle on the circle.
            return ((u * u - v * v) / r2, 2.0 * u * v / r2);
        }
    }
}

/// Validated inputs shared by every walk of a batch.
struct Kernel<'a> {
    domain: &'a DomainSpec,
    cfg: WalkConfig,
    p_absorb: f64,
}

impl<'a> Kernel<'a> {
    fn new(domain: &'a DomainSpec, a: f64, cfg: &WalkConfig) -> Result<Self> {
        cfg.validate(domain)?;
        let p_absorb = absorption_probability(a, cfg.eps)?;
        Ok(Self {
            domain,
            cfg: *cfg,
            p_absorb,
        })
    }

    fn check_start(&self, start: Point2) -> Result<()> {
        let ok = match self.cfg.source_mode {
            SourceMode::Target => self.domain.contains(start),
            SourceMode::Absent => self.domain.inside_outer(start),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "walk start ({}, {}) is not inside the walk region",
                start.x, start.y
            )))
        }
    }

    fn run(&self, start: Point2, rng: &mut ChaCha8Rng) -> WalkOutcome {
        let eps = self.cfg.eps;
        let source = match self.cfg.source_mode {
            SourceMode::Target => self.domain.source().copied(),
            SourceMode::Absent => None,
        };
        let mut x = start;
        let mut steps = 0u64;
        let mut reflections = 0u64;
        let mut stalled = 0u32;
        let mut hint: Option<usize> = None;
        // Last full query point and its clearance; while the walk stays
        // close to it, only the hinted edge can be nearest.
        let mut anchor = start;
        let mut anchor_clear = 0.0;
        let timeout = |reflections, steps| WalkOutcome {
            kind: OutcomeKind::Timeout,
            hit: None,
            reflections,
            steps,
        };
        loop {
            if steps >= self.cfg.max_steps || stalled > MAX_STALLED_REFLECTIONS {
                return timeout(reflections, steps);
            }
            // Far from the wall a precomputed lower bound on the distance
            // is enough for the sphere jump.
            let safe = self.domain.safe_radius(x);
            if safe > eps {
                let mut radius = safe;
                if let Some(s) = &source {
                    let ds = s.distance(x);
                    if ds < eps {
                        return WalkOutcome {
                            kind: OutcomeKind::HitSource,
                            hit: None,
                            reflections,
                            steps,
                        };
                    }
                    radius = radius.min(ds);
                }
                stalled = 0;
                let r = self.cfg.shrink * radius;
                let (c, s) = unit_vector(rng);
                x = Point2::new(x.x + r * c, x.y + r * s);
                steps += 1;
                continue;
            }
            let (q, clearance) = match self.cached_nearest(x, hint, anchor, anchor_clear) {
                Some(found) => found,
                None => {
                    let (q, c) = self.domain.nearest_with_clearance(x, hint);
                    anchor = x;
                    anchor_clear = c;
                    (q, c)
                }
            };
            hint = Some(q.edge_id);
            let mut radius = q.dist;
            if let Some(s) = &source {
                let ds = s.distance(x);
                if ds < eps {
                    return WalkOutcome {
                        kind: OutcomeKind::HitSource,
                        hit: None,
                        reflections,
                        steps,
                    };
                }
                radius = radius.min(ds);
            }
            if q.dist < eps {
                if self.p_absorb >= 1.0 || rng.random::<f64>() < self.p_absorb {
                    let arc = self
                        .domain
                        .arc_coordinate(q.nearest, q.edge_id)
                        .expect("nearest point lies on its edge");
                    return WalkOutcome {
                        kind: OutcomeKind::AbsorbedAt,
                        hit: Some(HitRecord {
                            point: q.nearest,
                            edge_id: q.edge_id,
                            arc,
                            reflections,
                            steps,
                        }),
                        reflections,
                        steps,
                    };
                }
                reflections += 1;
                stalled += 1;
                // Shift by eps from the current position, so every encounter
                // moves the walk the same distance off the wall.
                let normal = self.domain.outer().inward_normal(q.edge_id);
                let target = x + normal * eps;
                // A step of length eps cannot cross an edge that is farther
                // than eps, and moving inward never crosses the nearest one.
                let clear = clearance > eps
                    && source.as_ref().is_none_or(|s| s.distance(target) > 0.0);
                if clear || self.admissible(x, target, source.as_ref()) {
                    x = target;
                    continue;
                }
                match self.fallback(x, source.as_ref(), rng) {
                    Some(p) => x = p,
                    None => return timeout(reflections, steps),
                }
                continue;
            }
            stalled = 0;
            let r = self.cfg.shrink * radius;
            let (c, s) = unit_vector(rng);
            x = Point2::new(x.x + r * c, x.y + r * s);
            steps += 1;
        }
    }

    /// Nearest boundary point when the hinted edge is provably closer than
    /// every other edge, with a lower bound on the others' distance.
    #[inline]
    fn cached_nearest(
        &self,
        x: Point2,
        hint: Option<usize>,
        anchor: Point2,
        anchor_clear: f64,
    ) -> Option<(BoundaryDistance, f64)> {
        let h = hint?;
        let clear = anchor_clear - x.dist(anchor);
        if clear <= 0.0 {
            return None;
        }
        let (a, b) = self.domain.outer().edge(h);
        let (d2, nearest) = point_segment_distance_sq(x, a, b);
        if d2 < clear * clear {
            Some((
                BoundaryDistance {
                    dist: d2.sqrt(),
                    nearest,
                    edge_id: h,
                },
                clear,
            ))
        } else {
            None
        }
    }

    fn admissible(&self, from: Point2, to: Point2, source: Option<&crate::geometry::SourceSpec>) -> bool {
        if let Some(s) = source {
            if s.distance(to) <= 0.0 {
                return false;
            }
        }
        !self.domain.segment_hits_boundary(from, to)
    }

    /// Reentrant-corner fallback: a uniform point on the circle of radius
    /// `eps / 2` around the current position.
    fn fallback(
        &self,
        x: Point2,
        source: Option<&crate::geometry::SourceSpec>,
        rng: &mut ChaCha8Rng,
    ) -> Option<Point2> {
        let r = 0.5 * self.cfg.eps;
        for _ in 0..FALLBACK_TRIES {
            let (c, s) = unit_vector(rng);
            let p = Point2::new(x.x + r * c, x.y + r * s);
            if self.admissible(x, p, source) {
                return Some(p);
            }
        }
        None
    }

    fn batch(&self, start: Point2, seed: u64, first: u64, n: u64) -> Vec<WalkOutcome> {
        (first..first + n)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngSpec::new(seed, i).rng();
                self.run(start, &mut rng)
            })
            .collect()
    }
}

/// Runs a single walk from `start`.
pub fn run_walk(
    domain: &DomainSpec,
    start: Point2,
    a: f64,
    cfg: &WalkConfig,
    rng: RngSpec,
) -> Result<WalkOutcome> {
    let k = Kernel::new(domain, a, cfg)?;
    k.check_start(start)?;
    Ok(k.run(start, &mut rng.rng()))
}

/// Runs walks `0..n_walks` from `start`; walk `i` uses stream `i` of `seed`.
/// The result is ordered by walk index and independent of the rayon pool size.
pub fn run_walks(
    domain: &DomainSpec,
    start: Point2,
    a: f64,
    n_walks: u64,
    cfg: &WalkConfig,
    seed: u64,
) -> Result<Vec<WalkOutcome>> {
    let k = Kernel::new(domain, a, cfg)?;
    k.check_start(start)?;
    Ok(k.batch(start, seed, 0, n_walks))
}

/// Monte Carlo estimate of `u_a(x)`, the probability of reaching the source
/// before Robin absorption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_walks: u64,
    pub hit_source: u64,
    pub absorbed: u64,
    pub timeouts: u64,
    pub mean_reflections: f64,
    /// Set when more than 1% of the walks timed out.
    pub timeout_warning: bool,
}

/// Estimates `u_a(x)`; timed-out walks are excluded from the mean and
/// reported separately.
pub fn estimate_u(
    domain: &DomainSpec,
    x: Point2,
    a: f64,
    n_walks: u64,
    cfg: &WalkConfig,
    seed: u64,
) -> Result<UEstimate> {
    if domain.source().is_none() {
        return Err(Error::Config("estimate_u needs a domain with a source".into()));
    }
    if n_walks == 0 {
        return Err(Error::Config("n_walks must be at least 1".into()));
    }
    let cfg = cfg.with_source_mode(SourceMode::Target);
    let outcomes = run_walks(domain, x, a, n_walks, &cfg, seed)?;
    Ok(summarize_u(&outcomes))
}

/// Source-hit fraction of a batch run in [`SourceMode::Target`].
pub fn summarize_u(outcomes: &[WalkOutcome]) -> UEstimate {
    let n_walks = outcomes.len() as u64;
    let (mut hit_source, mut absorbed, mut timeouts, mut refl) = (0u64, 0u64, 0u64, 0u64);
    for o in outcomes {
        match o.kind {
            OutcomeKind::HitSource => hit_source += 1,
            OutcomeKind::AbsorbedAt => absorbed += 1,
            OutcomeKind::Timeout => timeouts += 1,
        }
        refl += o.reflections;
    }
    let finished = hit_source + absorbed;
    let (mean, stderr) = if finished == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let m = hit_source as f64 / finished as f64;
        (m, (m * (1.0 - m) / finished as f64).sqrt())
    };
    UEstimate {
        mean,
        stderr,
        n_walks,
        hit_source,
        absorbed,
        timeouts,
        mean_reflections: if n_walks > 0 { refl as f64 / n_walks as f64 } else { 0.0 },
        timeout_warning: timeouts as f64 > TIMEOUT_WARN_FRACTION * n_walks as f64,
    }
}

/// Absorption records of a batch started from one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    /// `(walk index, record)` for every absorbed walk, in walk order.
    pub hits: Vec<(u64, HitRecord)>,
    pub n_walks: u64,
    pub timeouts: u64,
    pub mean_reflections: f64,
    pub a: f64,
    pub eps: f64,
    pub seed: u64,
}

impl MeasureSample {
    pub fn arcs(&self) -> Vec<f64> {
        self.hits.iter().map(|(_, h)| h.arc).collect()
    }

    pub fn points(&self) -> Vec<Point2> {
        self.hits.iter().map(|(_, h)| h.point).collect()
    }

    pub fn timeout_fraction(&self) -> f64 {
        self.timeouts as f64 / self.n_walks as f64
    }
}

/// Samples the (Dirichlet for `a = ∞`, Robin otherwise) harmonic measure
/// seen from `x0`. The source disk, if any, is ignored.
pub fn sample_measure(
    domain: &DomainSpec,
    x0: Point2,
    a: f64,
    n_walks: u64,
    cfg: &WalkConfig,
    seed: u64,
) -> Result<MeasureSample> {
    let outcomes = measure_walks(domain, x0, a, n_walks, cfg, seed)?;
    let mut hits = Vec::with_capacity(outcomes.len());
    let (mut timeouts, mut refl) = (0u64, 0u64);
    for (i, o) in outcomes.iter().enumerate() {
        refl += o.reflections;
        match (o.kind, o.hit) {
            (OutcomeKind::AbsorbedAt, Some(h)) => hits.push((i as u64, h)),
            _ => timeouts += 1,
        }
    }
    Ok(MeasureSample {
        hits,
        n_walks,
        timeouts,
        mean_reflections: if n_walks > 0 { refl as f64 / n_walks as f64 } else { 0.0 },
        a,
        eps: cfg.eps,
        seed,
    })
}

/// All outcomes of a batch with the source ignored; `a = 0` is rejected
/// because such walks are never absorbed.
pub fn measure_walks(
    domain: &DomainSpec,
    x0: Point2,
    a: f64,
    n_walks: u64,
    cfg: &WalkConfig,
    seed: u64,
) -> Result<Vec<WalkOutcome>> {
    if a == 0.0 {
        return Err(Error::Config(
            "a = 0 never absorbs: the boundary measure is undefined".into(),
        ));
    }
    run_walks(domain, x0, a, n_walks, &cfg.with_source_mode(SourceMode::Absent), seed)
}
