//! Cell-centered finite differences for the Robin problem on grid-aligned
//! polygons.
//!
//! Unknowns live at the centers of Interior cells. Source cells are pinned to
//! one. A face between an Interior cell and the exterior lies on ∂Ω and is
//! closed with a ghost value: from `(u_ghost - u_in)/h = -a·u_face` and
//! `u_face = (u_ghost + u_in)/2`,
//!
//! ```text
//! u_ghost = u_in (2 - a h) / (2 + a h)
//! ```
//!
//! which adds `2ah / (2 + ah)` to the diagonal (2 for Dirichlet, 0 for
//! Neumann). The scaled operator `h²(-Δ)` is symmetric positive definite as
//! soon as there is a source or `a > 0`, so it is solved with conjugate
//! gradients (modified incomplete Cholesky preconditioner) or SOR.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Point2};
use crate::numeric::pairwise_sum;

/// Relative mismatch between boundary and source flux that signals an assembly bug.
pub const CONSERVATION_ERROR_LIMIT: f64 = 0.05;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Interior,
    Source,
    Exterior,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Interior => "interior",
            CellKind::Source => "source",
            CellKind::Exterior => "exterior",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    West,
    East,
    South,
    North,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::West, Face::East, Face::South, Face::North];
}

/// A cell face lying on ∂Ω, owned by the Interior cell `cell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub cell: usize,
    pub face: Face,
    pub edge_id: usize,
    pub arc_start: f64,
    pub arc_end: f64,
}

impl BoundaryFace {
    pub fn length(&self) -> f64 {
        self.arc_end - self.arc_start
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    /// Lower-left corner of cell (0, 0).
    pub origin: Point2,
    pub kinds: Vec<CellKind>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub perimeter: f64,
}

impl Grid {
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn center(&self, cell: usize) -> Point2 {
        let (i, j) = self.coords(cell);
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.h,
            self.origin.y + (j as f64 + 0.5) * self.h,
        )
    }

    /// Cell containing `p`, if it lies in the grid's bounding box.
    pub fn cell_at(&self, p: Point2) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.h;
        let fy = (p.y - self.origin.y) / self.h;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        (i < self.nx && j < self.ny).then(|| self.index(i, j))
    }

    #[inline]
    pub fn neighbor(&self, cell: usize, face: Face) -> Option<usize> {
        let (i, j) = self.coords(cell);
        match face {
            Face::West => (i > 0).then(|| cell - 1),
            Face::East => (i + 1 < self.nx).then(|| cell + 1),
            Face::South => (j > 0).then(|| cell - self.nx),
            Face::North => (j + 1 < self.ny).then(|| cell + self.nx),
        }
    }

    /// Kind of the neighbor across `face`; cells beyond the array are Exterior.
    #[inline]
    pub fn neighbor_kind(&self, cell: usize, face: Face) -> CellKind {
        self.neighbor(cell, face)
            .map_or(CellKind::Exterior, |n| self.kinds[n])
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn boundary_length(&self) -> f64 {
        pairwise_sum(&self.boundary_faces.iter().map(|f| f.length()).collect::<Vec<_>>())
    }
}

fn lattice_coord(v: f64, origin: f64, h: f64) -> Result<i64> {
    let t = (v - origin) / h;
    let r = t.round();
    if (t - r).abs() > 1e-7 {
        return Err(Error::Geometry(format!(
            "vertex coordinate {v} is not on the grid of spacing {h}; \
             use the Monte Carlo path for this domain"
        )));
    }
    Ok(r as i64)
}

/// Classifies grid cells by center membership and records the boundary faces
/// with their exact arc intervals.
pub fn rasterize(domain: &DomainSpec, h: f64) -> Result<Grid> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
    }
    let poly = domain.outer();
    let bbox = poly.bbox();
    let origin = bbox.min;
    let n = poly.edge_count();
    let mut lattice = Vec::with_capacity(n);
    for v in poly.vertices() {
        lattice.push((
            lattice_coord(v.x, origin.x, h)?,
            lattice_coord(v.y, origin.y, h)?,
        ));
    }
    for k in 0..n {
        let (a, b) = (lattice[k], lattice[(k + 1) % n]);
        if a.0 != b.0 && a.1 != b.1 {
            return Err(Error::Geometry(format!(
                "edge {k} is not axis-parallel; use the Monte Carlo path for this domain"
            )));
        }
    }
    let nx = lattice.iter().map(|p| p.0).max().unwrap() as usize;
    let ny = lattice.iter().map(|p| p.1).max().unwrap() as usize;
    if nx == 0 || ny == 0 {
        return Err(Error::Geometry("polygon is thinner than one cell".into()));
    }
    if nx.saturating_mul(ny) > 64 << 20 {
        return Err(Error::ResourceGuard(format!("grid of {nx} x {ny} cells is too large")));
    }

    // Scanline fill: row centers never coincide with lattice lines.
    let mut kinds = vec![CellKind::Exterior; nx * ny];
    let mut crossings: Vec<i64> = Vec::new();
    for j in 0..ny {
        let yc2 = 2 * j as i64 + 1;
        crossings.clear();
        for k in 0..n {
            let (a, b) = (lattice[k], lattice[(k + 1) % n]);
            if a.0 == b.0 && a.1 != b.1 {
                let (lo, hi) = (2 * a.1.min(b.1), 2 * a.1.max(b.1));
                if lo < yc2 && yc2 < hi {
                    crossings.push(a.0);
                }
            }
        }
        crossings.sort_unstable();
        for pair in crossings.chunks(2) {
            if let [x0, x1] = *pair {
                for i in x0..x1 {
                    kinds[j * nx + i as usize] = CellKind::Interior;
                }
            }
        }
    }

    let mut grid = Grid {
        h,
        nx,
        ny,
        origin,
        kinds,
        boundary_faces: Vec::new(),
        perimeter: domain.perimeter(),
    };

    if let Some(s) = domain.source() {
        let mut any = false;
        for c in 0..nx * ny {
            if grid.kinds[c] == CellKind::Interior && grid.center(c).dist(s.center) <= s.radius {
                grid.kinds[c] = CellKind::Source;
                any = true;
            }
        }
        if !any {
            return Err(Error::Geometry(format!(
                "source of radius {} contains no cell center at h = {h}",
                s.radius
            )));
        }
    }

    let params = domain.boundary_param();
    let mut faces = Vec::new();
    for k in 0..n {
        let (a, b) = (lattice[k], lattice[(k + 1) % n]);
        let (dx, dy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
        let steps = (b.0 - a.0).abs() + (b.1 - a.1).abs();
        let (s0, s1) = (params[k], params[k + 1]);
        for t in 0..steps {
            let (px, py) = (a.0 + dx * t, a.1 + dy * t);
            // The interior lies to the left of a counterclockwise edge.
            let (ci, cj, face) = match (dx, dy) {
                (1, 0) => (px, py, Face::South),
                (-1, 0) => (px - 1, py - 1, Face::North),
                (0, 1) => (px - 1, py, Face::East),
                (0, -1) => (px, py - 1, Face::West),
                _ => unreachable!(),
            };
            if ci < 0 || cj < 0 || ci as usize >= nx || cj as usize >= ny {
                return Err(Error::Internal(format!("edge {k} has no interior cell")));
            }
            let cell = grid.index(ci as usize, cj as usize);
            match grid.kinds[cell] {
                CellKind::Interior => {}
                CellKind::Source => {
                    return Err(Error::Geometry(
                        "source cells touch the boundary; shrink the source or refine h".into(),
                    ))
                }
                CellKind::Exterior => {
                    return Err(Error::Geometry(format!(
                        "edge {k} borders no interior cell at h = {h}; refine the grid"
                    )))
                }
            }
            if grid.neighbor_kind(cell, face) != CellKind::Exterior {
                return Err(Error::Geometry(format!(
                    "edge {k} separates two interior cells at h = {h}; refine the grid"
                )));
            }
            let arc_start = s0 + (s1 - s0) * t as f64 / steps as f64;
            let arc_end = if t + 1 == steps {
                s1
            } else {
                s0 + (s1 - s0) * (t + 1) as f64 / steps as f64
            };
            faces.push(BoundaryFace {
                cell,
                face,
                edge_id: k,
                arc_start,
                arc_end,
            });
        }
    }
    grid.boundary_faces = faces;

    let open_faces = (0..nx * ny)
        .filter(|&c| grid.kinds[c] != CellKind::Exterior)
        .map(|c| {
            Face::ALL
                .iter()
                .filter(|&&f| grid.neighbor_kind(c, f) == CellKind::Exterior)
                .count()
        })
        .sum::<usize>();
    if open_faces != grid.boundary_faces.len() {
        return Err(Error::Internal(format!(
            "{open_faces} interior/exterior faces but {} boundary faces",
            grid.boundary_faces.len()
        )));
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    ConjugateGradient,
    SuccessiveOverRelaxation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000_000,
            method: SolverMethod::ConjugateGradient,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 1e-4) {
            return Err(Error::Config(format!("tol must lie in (0, 1e-4], got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which boundary-value problem a field solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Problem {
    /// `u = 1` on the source, Robin closure on ∂Ω.
    Robin,
    /// Discrete Green function with pole at the given cell.
    Green { pole: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub method: SolverMethod,
    pub warnings: Vec<String>,
}

/// Grid function over all cells; Exterior cells hold zero.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub a: f64,
    pub problem: Problem,
    pub report: SolveReport,
}

impl ScalarField {
    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    /// Bilinear interpolation between the four surrounding cell centers,
    /// none of which may be Exterior.
    pub fn probe(&self, p: Point2) -> Result<f64> {
        let g = &self.grid;
        let fx = (p.x - g.origin.x) / g.h - 0.5;
        let fy = (p.y - g.origin.y) / g.h - 0.5;
        let (i0, j0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - i0, fy - j0);
        let mut acc = 0.0;
        for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
            for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                let (i, j) = (i0 as i64 + di, j0 as i64 + dj);
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                if i < 0 || j < 0 || i as usize >= g.nx || j as usize >= g.ny {
                    return Err(Error::Domain(format!("probe ({}, {}) is off the grid", p.x, p.y)));
                }
                let c = g.index(i as usize, j as usize);
                if g.kinds[c] == CellKind::Exterior {
                    return Err(Error::Domain(format!(
                        "probe ({}, {}) is too close to the boundary",
                        p.x, p.y
                    )));
                }
                acc += w * self.values[c];
            }
        }
        Ok(acc)
    }

    /// Value at each boundary face, `u_in · 2/(2 + ah)` (zero for Dirichlet).
    pub fn face_values(&self) -> Vec<f64> {
        let w = face_weight(self.a, self.grid.h);
        self.grid
            .boundary_faces
            .iter()
            .map(|f| w * self.values[f.cell])
            .collect()
    }

    pub fn min_boundary_value(&self) -> f64 {
        self.face_values().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Extremes over non-Exterior cells.
    pub fn range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (c, &k) in self.grid.kinds.iter().enumerate() {
            if k != CellKind::Exterior {
                lo = lo.min(self.values[c]);
                hi = hi.max(self.values[c]);
            }
        }
        (lo, hi)
    }
}

/// Diagonal contribution `1 - u_ghost/u_in = 2ah/(2 + ah)` of a boundary face.
#[inline]
pub fn robin_face_coefficient(a: f64, h: f64) -> f64 {
    if a.is_infinite() {
        2.0
    } else {
        2.0 * a * h / (2.0 + a * h)
    }
}

/// `u_face / u_in = 2/(2 + ah)`.
#[inline]
fn face_weight(a: f64, h: f64) -> f64 {
    if a.is_infinite() {
        0.0
    } else {
        2.0 / (2.0 + a * h)
    }
}

/// Compressed symmetric operator over the Interior cells.
struct System {
    cells: Vec<usize>,
    diag: Vec<f64>,
    /// Unknown index of the west, east, south, north neighbor or `NONE`.
    nbr: Vec<[u32; 4]>,
    rhs: Vec<f64>,
}

impl System {
    fn assemble(grid: &Grid, a: f64, pole: Option<usize>) -> Self {
        let mut unknown = vec![NONE; grid.kinds.len()];
        let mut cells = Vec::new();
        for (c, &k) in grid.kinds.iter().enumerate() {
            if k == CellKind::Interior {
                unknown[c] = cells.len() as u32;
                cells.push(c);
            }
        }
        let beta = robin_face_coefficient(a, grid.h);
        let mut diag = vec![0.0; cells.len()];
        let mut nbr = vec![[NONE; 4]; cells.len()];
        let mut rhs = vec![0.0; cells.len()];
        for (u, &c) in cells.iter().enumerate() {
            for (slot, &f) in Face::ALL.iter().enumerate() {
                match grid.neighbor(c, f) {
                    Some(n) if grid.kinds[n] == CellKind::Interior => {
                        diag[u] += 1.0;
                        nbr[u][slot] = unknown[n];
                    }
                    Some(n) if grid.kinds[n] == CellKind::Source => {
                        diag[u] += 1.0;
                        rhs[u] += 1.0;
                    }
                    _ => diag[u] += beta,
                }
            }
        }
        if let Some(p) = pole {
            rhs.iter_mut().for_each(|r| *r = 0.0);
            rhs[unknown[p] as usize] = 1.0;
        }
        Self {
            cells,
            diag,
            nbr,
            rhs,
        }
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for u in 0..self.len() {
            let mut acc = self.diag[u] * x[u];
            for &n in &self.nbr[u] {
                if n != NONE {
                    acc -= x[n as usize];
                }
            }
            y[u] = acc;
        }
    }

    fn residual_norm(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.apply(x, scratch);
        let sq: Vec<f64> = scratch
            .iter()
            .zip(&self.rhs)
            .map(|(ax, b)| (b - ax) * (b - ax))
            .collect();
        pairwise_sum(&sq).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed-order accumulation keeps solves bitwise reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Modified incomplete Cholesky factor of the 5-point operator in natural ordering.
struct Mic0 {
    precon: Vec<f64>,
}

impl Mic0 {
    const TAU: f64 = 0.97;
    const SIGMA: f64 = 0.25;

    fn new(sys: &System) -> Self {
        let n = sys.len();
        let mut precon = vec![0.0; n];
        for u in 0..n {
            let [w, _, s, _] = sys.nbr[u];
            let mut e = sys.diag[u];
            if w != NONE {
                let pw = precon[w as usize];
                e -= pw * pw;
                if sys.nbr[w as usize][3] != NONE {
                    e -= Self::TAU * pw * pw;
                }
            }
            if s != NONE {
                let ps = precon[s as usize];
                e -= ps * ps;
                if sys.nbr[s as usize][1] != NONE {
                    e -= Self::TAU * ps * ps;
                }
            }
            if e < Self::SIGMA * sys.diag[u] {
                e = sys.diag[u];
            }
            precon[u] = 1.0 / e.sqrt();
        }
        Self { precon }
    }

    fn apply(&self, sys: &System, r: &[f64], z: &mut [f64]) {
        let p = &self.precon;
        let n = sys.len();
        for u in 0..n {
            let [w, _, s, _] = sys.nbr[u];
            let mut t = r[u];
            if w != NONE {
                t += p[w as usize] * z[w as usize];
            }
            if s != NONE {
                t += p[s as usize] * z[s as usize];
            }
            z[u] = t * p[u];
        }
        for u in (0..n).rev() {
            let [_, e, _, nn] = sys.nbr[u];
            let mut t = z[u];
            if e != NONE {
                t += p[u] * z[e as usize];
            }
            if nn != NONE {
                t += p[u] * z[nn as usize];
            }
            z[u] = t * p[u];
        }
    }
}

fn solve_cg(sys: &System, cfg: &SolverConfig) -> Result<(Vec<f64>, usize, f64)> {
    let n = sys.len();
    let bnorm = dot(&sys.rhs, &sys.rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let pre = Mic0::new(sys);
    let mut r = sys.rhs.clone();
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // A couple of restarts from the true residual guard against drift of the
    // recursively updated one.
    for _ in 0..4 {
        pre.apply(sys, &r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < cfg.max_iter {
            if dot(&r, &r).sqrt() <= cfg.tol * bnorm {
                break;
            }
            sys.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            pre.apply(sys, &r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            iterations += 1;
        }
        let true_res = sys.residual_norm(&x, &mut ap) / bnorm;
        if true_res <= cfg.tol {
            return Ok((x, iterations, true_res));
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: true_res,
            });
        }
        sys.apply(&x, &mut ap);
        for k in 0..n {
            r[k] = sys.rhs[k] - ap[k];
        }
    }
    let res = sys.residual_norm(&x, &mut ap) / bnorm;
    Err(Error::NonConvergence {
        iterations,
        residual: res,
    })
}

fn solve_sor(sys: &System, grid: &Grid, cfg: &SolverConfig) -> Result<(Vec<f64>, usize, f64)> {
    let n = sys.len();
    let bnorm = dot(&sys.rhs, &sys.rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let m = grid.nx.max(grid.ny) as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / m).sin());
    let mut scratch = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        for _ in 0..10 {
            for u in 0..n {
                let mut s = sys.rhs[u];
                for &nb in &sys.nbr[u] {
                    if nb != NONE {
                        s += x[nb as usize];
                    }
                }
                let gs = s / sys.diag[u];
                x[u] += omega * (gs - x[u]);
            }
        }
        sweeps += 10;
        let res = sys.residual_norm(&x, &mut scratch) / bnorm;
        if res <= cfg.tol {
            return Ok((x, sweeps, res));
        }
        if sweeps >= cfg.max_iter || !res.is_finite() {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                residual: res,
            });
        }
    }
}

fn run_solver(
    grid: &Arc<Grid>,
    a: f64,
    pole: Option<usize>,
    cfg: &SolverConfig,
) -> Result<ScalarField> {
    cfg.validate()?;
    if a.is_nan() || a < 0.0 {
        return Err(Error::Config(format!("a must be >= 0, got {a}")));
    }
    let mut warnings = Vec::new();
    if a.is_finite() && a * grid.h > 2.0 {
        warnings.push(format!(
            "a*h = {} > 2: the ghost coefficient changes sign and accuracy degrades",
            a * grid.h
        ));
    }
    let sys = System::assemble(grid, a, pole);
    let (x, iterations, residual) = match cfg.method {
        SolverMethod::ConjugateGradient => solve_cg(&sys, cfg)?,
        SolverMethod::SuccessiveOverRelaxation => solve_sor(&sys, grid, cfg)?,
    };
    let mut values = vec![0.0; grid.kinds.len()];
    if pole.is_none() {
        for (c, &k) in grid.kinds.iter().enumerate() {
            if k == CellKind::Source {
                values[c] = 1.0;
            }
        }
    }
    for (u, &c) in sys.cells.iter().enumerate() {
        values[c] = x[u];
    }
    Ok(ScalarField {
        grid: Arc::clone(grid),
        values,
        a,
        problem: pole.map_or(Problem::Robin, |p| Problem::Green { pole: p }),
        report: SolveReport {
            iterations,
            residual,
            method: cfg.method,
            warnings,
        },
    })
}

/// Solves `Δu = 0` on the Interior cells with `u = 1` on Source cells and the
/// Robin closure of strength `a` (`a = ∞` for Dirichlet) on ∂Ω.
pub fn solve_robin(grid: &Arc<Grid>, a: f64, cfg: &SolverConfig) -> Result<ScalarField> {
    if grid.count(CellKind::Source) == 0 {
        return Err(Error::Config("the Robin problem needs at least one source cell".into()));
    }
    if a == 0.0 {
        // Pure Neumann with a unit source: the constant is exact.
        cfg.validate()?;
        let values = grid
            .kinds
            .iter()
            .map(|&k| if k == CellKind::Exterior { 0.0 } else { 1.0 })
            .collect();
        return Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
            a,
            problem: Problem::Robin,
            report: SolveReport {
                iterations: 0,
                residual: 0.0,
                method: cfg.method,
                warnings: Vec::new(),
            },
        });
    }
    run_solver(grid, a, None, cfg)
}

/// Discrete Robin Green function: `-Δ_h G = δ_y / h²` with the same boundary
/// closure. The returned field is nonnegative.
pub fn solve_green(grid: &Arc<Grid>, pole: usize, a: f64, cfg: &SolverConfig) -> Result<ScalarField> {
    if a == 0.0 {
        return Err(Error::Config(
            "the Neumann Green function (a = 0) is not supported".into(),
        ));
    }
    if grid.count(CellKind::Source) > 0 {
        return Err(Error::Config(
            "Green functions are computed on grids rasterized without a source".into(),
        ));
    }
    if grid.kinds.get(pole) != Some(&CellKind::Interior) {
        return Err(Error::Domain(format!("pole cell {pole} is not an interior cell")));
    }
    run_solver(grid, a, Some(pole), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    /// Flux through ∂Ω.
    pub total: f64,
    /// Flux leaving the source cells.
    pub source_flux: f64,
    /// `|total - source_flux| / max(total, source_flux)`.
    pub mismatch: f64,
}

/// Total flux through the membrane, cross-checked against the flux leaving
/// the source.
pub fn flux_total(field: &ScalarField) -> Result<FluxReport> {
    if field.problem != Problem::Robin {
        return Err(Error::Config("flux_total expects a Robin solution".into()));
    }
    let g = &field.grid;
    let beta = robin_face_coefficient(field.a, g.h);
    let boundary: Vec<f64> = g
        .boundary_faces
        .iter()
        .map(|f| beta * field.values[f.cell] * f.length() / g.h)
        .collect();
    let mut source = Vec::new();
    for (c, &k) in g.kinds.iter().enumerate() {
        if k != CellKind::Interior {
            continue;
        }
        for f in Face::ALL {
            if g.neighbor_kind(c, f) == CellKind::Source {
                source.push(1.0 - field.values[c]);
            }
        }
    }
    let total = pairwise_sum(&boundary);
    let source_flux = pairwise_sum(&source);
    let scale = total.abs().max(source_flux.abs());
    let mismatch = if scale == 0.0 {
        0.0
    } else {
        (total - source_flux).abs() / scale
    };
    if mismatch > CONSERVATION_ERROR_LIMIT {
        return Err(Error::Numerics(format!(
            "boundary flux {total} and source flux {source_flux} differ by {:.2}%",
            100.0 * mismatch
        )));
    }
    Ok(FluxReport {
        total,
        source_flux,
        mismatch,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceFlux {
    pub arc_start: f64,
    pub arc_end: f64,
    pub edge_id: usize,
    /// Flux per unit length.
    pub phi: f64,
    pub u_face: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxProfile {
    pub faces: Vec<FaceFlux>,
    pub total: f64,
}

/// Flux density along the boundary, `φ = a·u_face` (`2u_in/h` for Dirichlet).
pub fn flux_profile(field: &ScalarField) -> Result<FluxProfile> {
    if field.problem != Problem::Robin {
        return Err(Error::Config("flux_profile expects a Robin solution".into()));
    }
    let g = &field.grid;
    let beta = robin_face_coefficient(field.a, g.h);
    let w = face_weight(field.a, g.h);
    let faces: Vec<FaceFlux> = g
        .boundary_faces
        .iter()
        .map(|f| FaceFlux {
            arc_start: f.arc_start,
            arc_end: f.arc_end,
            edge_id: f.edge_id,
            phi: beta * field.values[f.cell] / g.h,
            u_face: w * field.values[f.cell],
        })
        .collect();
    let contributions: Vec<f64> = faces.iter().map(|f| f.phi * (f.arc_end - f.arc_start)).collect();
    Ok(FluxProfile {
        total: pairwise_sum(&contributions),
        faces,
    })
}
