//! Planar domains: prefractal polygons, source disks, arc-length
//! parameterization of the boundary and the distance/containment queries
//! shared by the walk simulator and the grid solver.
//!
//! Polygons are stored counterclockwise, so the outward normal of a directed
//! edge `a -> b` is its right-hand normal and the inward normal its left-hand
//! normal.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest generation accepted by [`build_prefractal`].
pub const MAX_GENERATION: u32 = 8;

/// Points closer than this (times the domain's length scale) to an edge are
/// classified as boundary points.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Tolerance for "point lies on edge" in [`DomainSpec::arc_coordinate`].
pub const ON_EDGE_TOL: f64 = 1e-9;

/// Default source radius as a fraction of the base scale.
pub const DEFAULT_SOURCE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Counterclockwise perpendicular (left-hand normal direction).
    #[inline]
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Squared distance from `p` to the segment `[a, b]` and the closest point.
///
/// Every distance query in the crate goes through this function, so the
/// accelerated and exhaustive searches agree bit for bit.
#[inline]
pub fn point_segment_distance_sq(p: Point2, a: Point2, b: Point2) -> (f64, Point2) {
    let d = b - a;
    let len_sq = d.norm_sq();
    let t = if len_sq > 0.0 {
        ((p - a).dot(d) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let c = a + d * t;
    ((p - c).norm_sq(), c)
}

#[inline]
fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

#[inline]
fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point2::new(f64::INFINITY, f64::INFINITY),
            max: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Point2) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    fn union(&mut self, o: &Aabb) {
        self.grow(o.min);
        self.grow(o.max);
    }

    #[inline]
    fn distance_sq(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx * dx + dy * dy
    }

    #[inline]
    fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Simple counterclockwise polygon; edge `i` runs from vertex `i` to vertex `i + 1`
/// (wrapping).
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    /// Validates the vertex loop. Clockwise input is reversed so the stored
    /// orientation is always counterclockwise. Simplicity is not checked here
    /// (see [`Polygon::check_simple`]).
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!("vertex {i} is not finite")));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::Geometry(format!(
                    "consecutive vertices {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn edge(&self, i: usize) -> (Point2, Point2) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn edge_length(&self, i: usize) -> f64 {
        let (a, b) = self.edge(i);
        a.dist(b)
    }

    /// Unit inward normal of edge `i` (left-hand normal for counterclockwise order).
    pub fn inward_normal(&self, i: usize) -> Point2 {
        let (a, b) = self.edge(i);
        let d = b - a;
        d.perp() * (1.0 / d.norm())
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.edge_count()).map(|i| self.edge_length(i)).sum()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len();
        // Shifting to the first vertex keeps the cross products well conditioned.
        let o = self.vertices[0];
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i] - o;
            let q = self.vertices[(i + 1) % n] - o;
            let c = p.cross(q);
            a2 += c;
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Point2::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2))
    }

    pub fn bbox(&self) -> Aabb {
        let mut b = Aabb::empty();
        for &v in &self.vertices {
            b.grow(v);
        }
        b
    }

    pub fn shortest_edge(&self) -> f64 {
        (0..self.edge_count())
            .map(|i| self.edge_length(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Returns the first offending pair of edges if the boundary self-intersects.
    ///
    /// Adjacent edges may only share their common vertex; folding back onto
    /// the previous edge counts as an intersection. Candidate pairs come from a
    /// uniform bucket grid, so the expected cost is linear in the edge count.
    pub fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.edge_count();
        for i in 0..n {
            let (a, b) = self.edge(i);
            let (_, c) = self.edge((i + 1) % n);
            let d1 = b - a;
            let d2 = c - b;
            if d1.cross(d2) == 0.0 && d1.dot(d2) < 0.0 {
                return Some((i, (i + 1) % n));
            }
        }
        let bbox = self.bbox();
        let mean_len = self.perimeter() / n as f64;
        let cell = (2.0 * mean_len).max(1e-300);
        let nx = ((bbox.width() / cell).floor() as usize + 1).min(4096);
        let ny = ((bbox.height() / cell).floor() as usize + 1).min(4096);
        let cw = (bbox.width() / nx as f64).max(f64::MIN_POSITIVE);
        let ch = (bbox.height() / ny as f64).max(f64::MIN_POSITIVE);
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        let cell_of = |v: f64, lo: f64, w: f64, m: usize| -> usize {
            (((v - lo) / w).floor().max(0.0) as usize).min(m - 1)
        };
        for i in 0..n {
            let (a, b) = self.edge(i);
            let i0 = cell_of(a.x.min(b.x), bbox.min.x, cw, nx);
            let i1 = cell_of(a.x.max(b.x), bbox.min.x, cw, nx);
            let j0 = cell_of(a.y.min(b.y), bbox.min.y, ch, ny);
            let j1 = cell_of(a.y.max(b.y), bbox.min.y, ch, ny);
            for j in j0..=j1 {
                for ii in i0..=i1 {
                    buckets[j * nx + ii].push(i as u32);
                }
            }
        }
        for bucket in &buckets {
            for (k, &ei) in bucket.iter().enumerate() {
                for &ej in &bucket[k + 1..] {
                    let (i, j) = (ei as usize, ej as usize);
                    if i.abs_diff(j) == 1 || i.abs_diff(j) == n - 1 {
                        continue;
                    }
                    let (a, b) = self.edge(i);
                    let (c, d) = self.edge(j);
                    if segments_intersect(a, b, c, d) {
                        return Some((i.min(j), i.max(j)));
                    }
                }
            }
        }
        None
    }

    pub fn check_simple(&self) -> Result<()> {
        match self.find_self_intersection() {
            None => Ok(()),
            Some((i, j)) => Err(Error::Geometry(format!("edges {i} and {j} intersect"))),
        }
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    let o = v[0];
    let mut a2 = 0.0;
    for i in 0..n {
        a2 += (v[i] - o).cross(v[(i + 1) % n] - o);
    }
    0.5 * a2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefractalFamily {
    TriadicKochSnowflake,
    QuadraticKochIsland,
    Square,
    DiskPolygon { n_sides: u32 },
}

impl PrefractalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PrefractalFamily::TriadicKochSnowflake => "triadic-koch-snowflake",
            PrefractalFamily::QuadraticKochIsland => "quadratic-koch-island",
            PrefractalFamily::Square => "square",
            PrefractalFamily::DiskPolygon { .. } => "disk-polygon",
        }
    }

    pub fn is_fractal(&self) -> bool {
        matches!(
            self,
            PrefractalFamily::TriadicKochSnowflake | PrefractalFamily::QuadraticKochIsland
        )
    }

    /// Length reduction factor of one generator step.
    pub fn ratio(&self) -> f64 {
        match self {
            PrefractalFamily::TriadicKochSnowflake => 3.0,
            PrefractalFamily::QuadraticKochIsland => 4.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefractalSpec {
    pub family: PrefractalFamily,
    pub generation: u32,
    pub base_scale: f64,
}

impl PrefractalSpec {
    pub fn new(family: PrefractalFamily, generation: u32, base_scale: f64) -> Self {
        Self {
            family,
            generation,
            base_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generation > MAX_GENERATION {
            return Err(Error::ResourceGuard(format!(
                "generation {} exceeds the limit of {MAX_GENERATION}",
                self.generation
            )));
        }
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) {
            return Err(Error::Geometry(format!(
                "base_scale must be finite and positive, got {}",
                self.base_scale
            )));
        }
        if let PrefractalFamily::DiskPolygon { n_sides } = self.family {
            if n_sides < 3 {
                return Err(Error::Geometry(format!(
                    "disk polygon needs at least 3 sides, got {n_sides}"
                )));
            }
        }
        Ok(())
    }

    /// Edge length at the finest generation.
    pub fn finest_edge_length(&self) -> f64 {
        match self.family {
            PrefractalFamily::DiskPolygon { n_sides } => {
                2.0 * self.base_scale * (std::f64::consts::PI / n_sides as f64).sin()
            }
            f => self.base_scale / f.ratio().powi(self.generation as i32),
        }
    }
}

/// Similarity dimension of the limit curve of the family.
pub fn similarity_dimension(spec: &PrefractalSpec) -> f64 {
    match spec.family {
        PrefractalFamily::TriadicKochSnowflake => 4f64.ln() / 3f64.ln(),
        PrefractalFamily::QuadraticKochIsland => 8f64.ln() / 4f64.ln(),
        PrefractalFamily::Square | PrefractalFamily::DiskPolygon { .. } => 1.0,
    }
}

/// Generates the prefractal boundary polygon.
///
/// The snowflake starts from an equilateral triangle of side `base_scale`
/// centered on the origin; the quadratic island starts from the square
/// `[0, base_scale]^2` so all its vertices sit on the lattice of spacing
/// `base_scale / 4^g`. Disk polygons have circumradius `base_scale` and the
/// generation is ignored.
pub fn build_prefractal(spec: &PrefractalSpec) -> Result<Polygon> {
    spec.validate()?;
    let b = spec.base_scale;
    let vertices = match spec.family {
        PrefractalFamily::TriadicKochSnowflake => {
            let h = b * 3f64.sqrt() / 6.0;
            let mut v = vec![
                Point2::new(-0.5 * b, -h),
                Point2::new(0.5 * b, -h),
                Point2::new(0.0, 2.0 * h),
            ];
            for _ in 0..spec.generation {
                v = koch_step(&v);
            }
            v
        }
        PrefractalFamily::QuadraticKochIsland => {
            let mut v = vec![
                Point2::new(0.0, 0.0),
                Point2::new(b, 0.0),
                Point2::new(b, b),
                Point2::new(0.0, b),
            ];
            for _ in 0..spec.generation {
                v = quadratic_step(&v);
            }
            v
        }
        PrefractalFamily::Square => vec![
            Point2::new(0.0, 0.0),
            Point2::new(b, 0.0),
            Point2::new(b, b),
            Point2::new(0.0, b),
        ],
        PrefractalFamily::DiskPolygon { n_sides } => (0..n_sides)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n_sides as f64;
                Point2::new(b * t.cos(), b * t.sin())
            })
            .collect(),
    };
    let poly = Polygon::new(vertices)?;
    if let Some((i, j)) = poly.find_self_intersection() {
        return Err(Error::Internal(format!(
            "{} generation {} self-intersects at edges {i}/{j}",
            spec.family.name(),
            spec.generation
        )));
    }
    Ok(poly)
}

fn koch_step(v: &[Point2]) -> Vec<Point2> {
    let n = v.len();
    let k = 3f64.sqrt() / 6.0;
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let d = b - a;
        // Outward bump: right-hand normal of a counterclockwise edge.
        let out_n = Point2::new(d.y, -d.x);
        out.push(a);
        out.push(a + d * (1.0 / 3.0));
        out.push(a + d * 0.5 + out_n * k);
        out.push(a + d * (2.0 / 3.0));
    }
    out
}

fn quadratic_step(v: &[Point2]) -> Vec<Point2> {
    let n = v.len();
    let mut out = Vec::with_capacity(8 * n);
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let u = (b - a) * 0.25;
        let w = u.perp();
        out.push(a);
        out.push(a + u);
        out.push(a + u + w);
        out.push(a + u * 2.0 + w);
        out.push(a + u * 2.0);
        out.push(a + u * 2.0 - w);
        out.push(a + u * 3.0 - w);
        out.push(a + u * 3.0);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub center: Point2,
    pub radius: f64,
}

impl SourceSpec {
    #[inline]
    pub fn distance(&self, p: Point2) -> f64 {
        p.dist(self.center) - self.radius
    }
}

/// Result of a nearest-boundary query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryDistance {
    pub dist: f64,
    pub nearest: Point2,
    pub edge_id: usize,
}

#[derive(Clone, Copy, Debug)]
struct BvhNode {
    bounds: Aabb,
    // Leaf: first index into `order`; inner: index of left child (right = left + 1).
    start: u32,
    count: u32,
}

const BVH_LEAF: usize = 4;

/// Bounding-volume hierarchy over the polygon edges.
#[derive(Clone, Debug)]
struct SegmentIndex {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
    a: Vec<Point2>,
    b: Vec<Point2>,
}

impl SegmentIndex {
    fn build(poly: &Polygon) -> Self {
        let n = poly.edge_count();
        let (a, b): (Vec<_>, Vec<_>) = (0..n).map(|i| poly.edge(i)).unzip();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / BVH_LEAF + 1);
        nodes.push(BvhNode {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
        });
        let mut idx = SegmentIndex {
            nodes,
            order: Vec::new(),
            a,
            b,
        };
        idx.split(0, &mut order, 0, n);
        idx.order = order;
        idx
    }

    fn seg_bounds(&self, i: usize) -> Aabb {
        let mut bb = Aabb::empty();
        bb.grow(self.a[i]);
        bb.grow(self.b[i]);
        bb
    }

    fn split(&mut self, node: usize, order: &mut [u32], lo: usize, hi: usize) {
        let mut bounds = Aabb::empty();
        for &i in &order[lo..hi] {
            bounds.union(&self.seg_bounds(i as usize));
        }
        self.nodes[node].bounds = bounds;
        if hi - lo <= BVH_LEAF {
            self.nodes[node].start = lo as u32;
            self.nodes[node].count = (hi - lo) as u32;
            return;
        }
        let mid_of = |s: &SegmentIndex, i: u32| (s.a[i as usize] + s.b[i as usize]) * 0.5;
        let by_x = bounds.width() >= bounds.height();
        let mid = (lo + hi) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| {
            let (pi, pj) = (mid_of(self, i), mid_of(self, j));
            let (ki, kj) = if by_x { (pi.x, pj.x) } else { (pi.y, pj.y) };
            ki.total_cmp(&kj).then(i.cmp(&j))
        });
        let left = self.nodes.len();
        let empty = BvhNode {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
        };
        self.nodes.push(empty);
        self.nodes.push(empty);
        self.nodes[node].start = left as u32;
        self.nodes[node].count = 0;
        self.split(left, order, lo, mid);
        self.split(left + 1, order, mid, hi);
    }

    /// Nearest edge; ties go to the lowest edge id. `hint` seeds the search
    /// with a likely candidate (typically the previous answer).
    #[inline]
    fn nearest(&self, p: Point2, hint: Option<usize>) -> (f64, Point2, usize) {
        let (mut best_d2, mut best_c, mut best_id) = (f64::INFINITY, p, usize::MAX);
        if let Some(h) = hint {
            let (d2, c) = point_segment_distance_sq(p, self.a[h], self.b[h]);
            best_d2 = d2;
            best_c = c;
            best_id = h;
        }
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        stack[0] = 0;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            // Small slack so rounding in the box bound never prunes a tie.
            if node.bounds.distance_sq(p) > best_d2 * (1.0 + 1e-12) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &i in &self.order[s..s + node.count as usize] {
                    let i = i as usize;
                    let (d2, c) = point_segment_distance_sq(p, self.a[i], self.b[i]);
                    if d2 < best_d2 || (d2 == best_d2 && i < best_id) {
                        best_d2 = d2;
                        best_c = c;
                        best_id = i;
                    }
                }
            } else {
                let l = node.start as usize;
                let dl = self.nodes[l].bounds.distance_sq(p);
                let dr = self.nodes[l + 1].bounds.distance_sq(p);
                // Push the farther child first so the nearer one is popped next.
                if dl <= dr {
                    stack[sp] = (l + 1) as u32;
                    stack[sp + 1] = l as u32;
                } else {
                    stack[sp] = l as u32;
                    stack[sp + 1] = (l + 1) as u32;
                }
                sp += 2;
            }
        }
        (best_d2.sqrt(), best_c, best_id)
    }

    /// Number of edges crossed by the ray from `p` towards +x (half-open rule).
    fn ray_crossings(&self, p: Point2) -> usize {
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let bb = &node.bounds;
            if p.y < bb.min.y || p.y > bb.max.y || bb.max.x < p.x {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &i in &self.order[s..s + node.count as usize] {
                    let (a, b) = (self.a[i as usize], self.b[i as usize]);
                    if (a.y > p.y) != (b.y > p.y) {
                        let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                        if x > p.x {
                            count += 1;
                        }
                    }
                }
            } else {
                stack.push(node.start as usize);
                stack.push(node.start as usize + 1);
            }
        }
        count
    }

    /// Whether the closed segment `[p, q]` touches any edge.
    fn segment_hits(&self, p: Point2, q: Point2) -> bool {
        let mut probe = Aabb::empty();
        probe.grow(p);
        probe.grow(q);
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        stack[0] = 0;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !node.bounds.overlaps(&probe) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &i in &self.order[s..s + node.count as usize] {
                    if segments_intersect(p, q, self.a[i as usize], self.b[i as usize]) {
                        return true;
                    }
                }
            } else {
                stack[sp] = node.start;
                stack[sp + 1] = node.start + 1;
                sp += 2;
            }
        }
        false
    }
}

/// Uniform bucket grid: cell `k` lists every edge whose bounding box meets
/// cell `k` grown by one cell width, so it holds all edges within one cell
/// width of any point of the cell. Used for queries close to the boundary.
#[derive(Clone, Debug)]
struct CellLists {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

const MAX_CELLS_PER_AXIS: f64 = 2048.0;
/// Edges are registered in every cell within this many cells of their
/// bounding box, so a bucket holds every edge closer than `REACH` cells.
const REACH: usize = 2;
const CLEARANCE_MIN_CELLS: f64 = 0.5;

impl CellLists {
    fn build(poly: &Polygon) -> Self {
        let bb = poly.bbox();
        let extent = bb.width().max(bb.height());
        let cell = (0.5 * poly.shortest_edge()).max(extent / MAX_CELLS_PER_AXIS);
        let pad = REACH as f64 * cell;
        let origin = Point2::new(bb.min.x - pad, bb.min.y - pad);
        let nx = (bb.width() / cell).ceil() as usize + 2 * REACH;
        let ny = (bb.height() / cell).ceil() as usize + 2 * REACH;
        let range = |lo: f64, hi: f64, o: f64, m: usize| -> (usize, usize) {
            let r = REACH as f64;
            let a = (((lo - o) / cell).floor() - r).max(0.0) as usize;
            let b = ((((hi - o) / cell).floor() + r).max(0.0) as usize).min(m - 1);
            (a.min(m - 1), b)
        };
        let mut counts = vec![0u32; nx * ny + 1];
        let mut cover = Vec::with_capacity(poly.edge_count());
        for e in 0..poly.edge_count() {
            let (a, b) = poly.edge(e);
            let (i0, i1) = range(a.x.min(b.x), a.x.max(b.x), origin.x, nx);
            let (j0, j1) = range(a.y.min(b.y), a.y.max(b.y), origin.y, ny);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    counts[j * nx + i + 1] += 1;
                }
            }
            cover.push((i0, i1, j0, j1));
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; *counts.last().unwrap() as usize];
        for (e, &(i0, i1, j0, j1)) in cover.iter().enumerate() {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = j * nx + i;
                    items[fill[k] as usize] = e as u32;
                    fill[k] += 1;
                }
            }
        }
        Self {
            origin,
            cell,
            nx,
            ny,
            start: counts,
            items,
        }
    }

    #[inline]
    fn bucket(&self, p: Point2) -> Option<&[u32]> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        if i >= self.nx || j >= self.ny {
            return None;
        }
        let k = j * self.nx + i;
        Some(&self.items[self.start[k] as usize..self.start[k + 1] as usize])
    }
}

/// A bounded domain Ω with an optional source disk B.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    outer: Polygon,
    source: Option<SourceSpec>,
    prefractal: Option<PrefractalSpec>,
    /// `boundary_param[k]` is the arc coordinate of vertex `k`; the final
    /// entry is the perimeter.
    boundary_param: Vec<f64>,
    length_scale: f64,
    index: SegmentIndex,
    cells: CellLists,
    /// Per bucket cell, the boundary distance of the cell center, or zero
    /// for cells that are outside or close to the wall. Built on first use.
    clearance: OnceLock<Vec<f64>>,
}

impl DomainSpec {
    pub fn new(
        outer: Polygon,
        source: Option<SourceSpec>,
        prefractal: Option<PrefractalSpec>,
    ) -> Result<Self> {
        let n = outer.edge_count();
        let mut boundary_param = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        boundary_param.push(0.0);
        for i in 0..n {
            acc += outer.edge_length(i);
            boundary_param.push(acc);
        }
        let length_scale = match prefractal {
            Some(p) => p.base_scale,
            None => {
                let bb = outer.bbox();
                bb.width().max(bb.height())
            }
        };
        let index = SegmentIndex::build(&outer);
        let cells = CellLists::build(&outer);
        let mut dom = Self {
            outer,
            source: None,
            prefractal,
            boundary_param,
            length_scale,
            index,
            cells,
            clearance: OnceLock::new(),
        };
        if let Some(s) = source {
            dom.set_source(Some(s))?;
        }
        Ok(dom)
    }

    /// Prefractal domain without a source.
    pub fn from_prefractal(spec: PrefractalSpec) -> Result<Self> {
        let poly = build_prefractal(&spec)?;
        Self::new(poly, None, Some(spec))
    }

    /// Source disk of radius `0.05 * length_scale` at the polygon centroid.
    pub fn default_source(&self) -> SourceSpec {
        SourceSpec {
            center: self.outer.centroid(),
            radius: DEFAULT_SOURCE_FRACTION * self.length_scale,
        }
    }

    pub fn with_source(mut self, source: Option<SourceSpec>) -> Result<Self> {
        self.set_source(source)?;
        Ok(self)
    }

    pub fn with_default_source(self) -> Result<Self> {
        let s = self.default_source();
        self.with_source(Some(s))
    }

    fn set_source(&mut self, source: Option<SourceSpec>) -> Result<()> {
        if let Some(s) = source {
            if !(s.radius.is_finite() && s.radius > 0.0) || !s.center.is_finite() {
                return Err(Error::Geometry(format!(
                    "source radius must be finite and positive, got {}",
                    s.radius
                )));
            }
            if !self.inside_outer(s.center) {
                return Err(Error::Geometry("source center lies outside the polygon".into()));
            }
            let (d, _, _) = self.index.nearest(s.center, None);
            if d <= s.radius {
                return Err(Error::Geometry(format!(
                    "source disk (r = {}) reaches the boundary (distance {d})",
                    s.radius
                )));
            }
        }
        self.source = source;
        Ok(())
    }

    pub fn outer(&self) -> &Polygon {
        &self.outer
    }

    pub fn source(&self) -> Option<&SourceSpec> {
        self.source.as_ref()
    }

    pub fn prefractal(&self) -> Option<&PrefractalSpec> {
        self.prefractal.as_ref()
    }

    pub fn boundary_param(&self) -> &[f64] {
        &self.boundary_param
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn perimeter(&self) -> f64 {
        *self.boundary_param.last().unwrap()
    }

    pub fn edge_count(&self) -> usize {
        self.outer.edge_count()
    }

    pub fn centroid(&self) -> Point2 {
        self.outer.centroid()
    }

    /// Similarity dimension of the boundary (1 for explicit polygons).
    pub fn boundary_dimension(&self) -> f64 {
        self.prefractal.as_ref().map_or(1.0, similarity_dimension)
    }

    /// Short name for file names and reports, e.g. `quadratic-koch-island-g2`.
    pub fn label(&self) -> String {
        match &self.prefractal {
            Some(p) => match p.family {
                PrefractalFamily::DiskPolygon { n_sides } => format!("disk-polygon-{n_sides}"),
                f if f.is_fractal() => format!("{}-g{}", f.name(), p.generation),
                f => f.name().to_string(),
            },
            None => format!("polygon-{}", self.edge_count()),
        }
    }

    /// Strictly inside the outer polygon (boundary points excluded), ignoring the source.
    pub fn inside_outer(&self, p: Point2) -> bool {
        if !p.is_finite() {
            return false;
        }
        let (d, _, _) = self.index.nearest(p, None);
        if d <= BOUNDARY_TOL * self.length_scale {
            return false;
        }
        self.index.ray_crossings(p) % 2 == 1
    }

    fn clearance_grid(&self) -> &[f64] {
        self.clearance.get_or_init(|| {
            let c = &self.cells;
            let half_diag = c.cell * std::f64::consts::FRAC_1_SQRT_2;
            let mut lb = vec![0.0; c.nx * c.ny];
            let mut hint = None;
            for j in 0..c.ny {
                for i in 0..c.nx {
                    let center = Point2::new(
                        c.origin.x + (i as f64 + 0.5) * c.cell,
                        c.origin.y + (j as f64 + 0.5) * c.cell,
                    );
                    let (d, _, e) = self.index.nearest(center, hint);
                    hint = Some(e);
                    // Cells near the wall are left at zero: there the bound is
                    // loose and the exact query is cheap anyway.
                    if d - half_diag >= CLEARANCE_MIN_CELLS * c.cell
                        && self.index.ray_crossings(center) % 2 == 1
                    {
                        lb[j * c.nx + i] = d;
                    }
                }
            }
            lb
        })
    }

    /// A radius `r` such that the open disk of radius `r` around `p` lies
    /// inside the polygon; zero when no cheap bound is available. The
    /// source disk is ignored.
    #[inline]
    pub fn safe_radius(&self, p: Point2) -> f64 {
        let c = &self.cells;
        let fx = (p.x - c.origin.x) / c.cell;
        let fy = (p.y - c.origin.y) / c.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return 0.0;
        }
        let (i, j) = (fx as usize, fy as usize);
        if i >= c.nx || j >= c.ny {
            return 0.0;
        }
        let d = self.clearance_grid()[j * c.nx + i];
        if d == 0.0 {
            return 0.0;
        }
        let center = Point2::new(
            c.origin.x + (i as f64 + 0.5) * c.cell,
            c.origin.y + (j as f64 + 0.5) * c.cell,
        );
        d - p.dist(center)
    }

    /// Membership in Ω∖B: strictly inside the polygon and strictly outside the source disk.
    pub fn contains(&self, p: Point2) -> bool {
        if !self.inside_outer(p) {
            return false;
        }
        match &self.source {
            Some(s) => s.distance(p) > BOUNDARY_TOL * self.length_scale,
            None => true,
        }
    }

    /// Exact Euclidean distance to the polygon boundary.
    pub fn distance_to_boundary(&self, p: Point2) -> Result<BoundaryDistance> {
        if !self.inside_outer(p) {
            return Err(Error::Domain(format!(
                "point ({}, {}) is not inside the polygon",
                p.x, p.y
            )));
        }
        Ok(self.nearest_boundary(p, None))
    }

    /// Unchecked nearest-edge query; `hint` may name a likely nearest edge.
    ///
    /// Near the wall the answer is the minimum over the bucket of `p`, which
    /// holds every edge within a few bucket widths; otherwise the hierarchy
    /// is searched, starting from `hint`. Both paths return the exhaustive
    /// minimum, ties to the lowest edge id.
    #[inline]
    pub fn nearest_boundary(&self, p: Point2, hint: Option<usize>) -> BoundaryDistance {
        self.nearest_with_clearance(p, hint).0
    }

    /// Nearest boundary point plus a lower bound on the distance to every
    /// other edge (zero when no bound is available).
    #[inline]
    pub fn nearest_with_clearance(&self, p: Point2, hint: Option<usize>) -> (BoundaryDistance, f64) {
        if let Some(bucket) = self.cells.bucket(p) {
            let (mut best_d2, mut best_c, mut best_id) = (f64::INFINITY, p, usize::MAX);
            let mut second_d2 = f64::INFINITY;
            for &e in bucket {
                let e = e as usize;
                let (d2, cp) = point_segment_distance_sq(p, self.index.a[e], self.index.b[e]);
                if d2 < best_d2 || (d2 == best_d2 && e < best_id) {
                    second_d2 = best_d2;
                    best_d2 = d2;
                    best_c = cp;
                    best_id = e;
                } else if d2 < second_d2 {
                    second_d2 = d2;
                }
            }
            // Edges missing from the bucket are at least `reach` away.
            let reach = REACH as f64 * self.cells.cell;
            if best_d2 < reach * reach * (1.0 - 1e-9) {
                let clearance = second_d2.min(reach * reach).sqrt();
                return (
                    BoundaryDistance {
                        dist: best_d2.sqrt(),
                        nearest: best_c,
                        edge_id: best_id,
                    },
                    clearance,
                );
            }
        }
        let (dist, nearest, edge_id) = self.index.nearest(p, hint);
        (
            BoundaryDistance {
                dist,
                nearest,
                edge_id,
            },
            0.0,
        )
    }

    /// Whether the closed segment `[p, q]` touches the polygon boundary.
    pub fn segment_hits_boundary(&self, p: Point2, q: Point2) -> bool {
        if p.dist(q) < self.cells.cell {
            if let Some(bucket) = self.cells.bucket(p) {
                return bucket.iter().any(|&e| {
                    let e = e as usize;
                    segments_intersect(p, q, self.index.a[e], self.index.b[e])
                });
            }
        }
        self.index.segment_hits(p, q)
    }

    /// Arc coordinate in `[0, perimeter)` of a point on edge `edge_id`.
    pub fn arc_coordinate(&self, p: Point2, edge_id: usize) -> Result<f64> {
        if edge_id >= self.edge_count() {
            return Err(Error::Domain(format!("edge {edge_id} does not exist")));
        }
        let (a, b) = self.outer.edge(edge_id);
        let (d2, _) = point_segment_distance_sq(p, a, b);
        if d2.sqrt() > ON_EDGE_TOL * self.length_scale {
            return Err(Error::Domain(format!(
                "point ({}, {}) is {} away from edge {edge_id}",
                p.x,
                p.y,
                d2.sqrt()
            )));
        }
        let len = self.boundary_param[edge_id + 1] - self.boundary_param[edge_id];
        let t = (p - a).norm().min(len);
        let s = self.boundary_param[edge_id] + t;
        let per = self.perimeter();
        Ok(if s >= per { s - per } else { s })
    }

    /// Point at arc coordinate `s` (taken modulo the perimeter) and its edge id.
    pub fn point_at_arc(&self, s: f64) -> (Point2, usize) {
        let per = self.perimeter();
        let s = s.rem_euclid(per);
        let k = self.boundary_param.partition_point(|&c| c <= s);
        let edge = k.saturating_sub(1).min(self.edge_count() - 1);
        let (a, b) = self.outer.edge(edge);
        let len = self.boundary_param[edge + 1] - self.boundary_param[edge];
        let t = ((s - self.boundary_param[edge]) / len).clamp(0.0, 1.0);
        (a + (b - a) * t, edge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square() -> DomainSpec {
        DomainSpec::from_prefractal(PrefractalSpec::new(PrefractalFamily::Square, 0, 1.0)).unwrap()
    }

    #[test]
    fn triadic_base_case_is_triangle() {
        let p = build_prefractal(&PrefractalSpec::new(
            PrefractalFamily::TriadicKochSnowflake,
            0,
            1.0,
        ))
        .unwrap();
        assert_eq!(p.edge_count(), 3);
        assert_abs_diff_eq!(p.perimeter(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn triadic_generation_two() {
        let p = build_prefractal(&PrefractalSpec::new(
            PrefractalFamily::TriadicKochSnowflake,
            2,
            1.0,
        ))
        .unwrap();
        assert_eq!(p.edge_count(), 48);
        assert_abs_diff_eq!(p.perimeter(), 16.0 / 3.0, epsilon = 1e-9);
        for i in 0..48 {
            assert_abs_diff_eq!(p.edge_length(i), 1.0 / 9.0, epsilon = 1e-12);
        }
        assert!(p.signed_area() > 0.0);
    }

    #[test]
    fn quadratic_generation_one() {
        let p = build_prefractal(&PrefractalSpec::new(
            PrefractalFamily::QuadraticKochIsland,
            1,
            1.0,
        ))
        .unwrap();
        assert_eq!(p.edge_count(), 32);
        assert_abs_diff_eq!(p.perimeter(), 8.0, epsilon = 1e-12);
        // The generator preserves area.
        assert_abs_diff_eq!(p.signed_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn generation_guard() {
        let err = build_prefractal(&PrefractalSpec::new(
            PrefractalFamily::TriadicKochSnowflake,
            9,
            1.0,
        ))
        .unwrap_err();
        assert!(matches!(err, Error::ResourceGuard(_)));
    }

    #[test]
    fn similarity_dimensions() {
        let d = |f| similarity_dimension(&PrefractalSpec::new(f, 3, 1.0));
        assert_abs_diff_eq!(
            d(PrefractalFamily::TriadicKochSnowflake),
            1.26186,
            epsilon = 1e-5
        );
        assert_eq!(d(PrefractalFamily::Square), 1.0);
        assert_abs_diff_eq!(d(PrefractalFamily::QuadraticKochIsland), 1.5, epsilon = 1e-15);
        assert_eq!(d(PrefractalFamily::DiskPolygon { n_sides: 64 }), 1.0);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let p = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(p.signed_area() > 0.0);
    }

    #[test]
    fn degenerate_polygons_rejected() {
        assert!(Polygon::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)]).is_err());
        assert!(Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0)
        ])
        .is_err());
        assert!(Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0)
        ])
        .is_err());
    }

    #[test]
    fn bowtie_detected() {
        let p = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 2.0),
            Point2::new(1.0, -1.0),
            Point2::new(0.0, 2.0),
        ])
        .unwrap();
        assert!(p.check_simple().is_err());
    }

    #[test]
    fn containment() {
        let d = unit_square();
        assert!(d.contains(Point2::new(0.5, 0.5)));
        assert!(!d.contains(Point2::new(2.0, 2.0)));
        assert!(!d.contains(Point2::new(0.0, 0.5)));
        let d = d
            .with_source(Some(SourceSpec {
                center: Point2::new(0.5, 0.5),
                radius: 0.1,
            }))
            .unwrap();
        assert!(!d.contains(Point2::new(0.5, 0.5)));
        assert!(d.contains(Point2::new(0.5, 0.65)));
    }

    #[test]
    fn square_distances() {
        let d = unit_square();
        let q = d.distance_to_boundary(Point2::new(0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(q.dist, 0.5, epsilon = 1e-15);
        // All four edges tie; the lowest id wins.
        assert_eq!(q.edge_id, 0);
        let q = d.distance_to_boundary(Point2::new(0.1, 0.5)).unwrap();
        assert_abs_diff_eq!(q.dist, 0.1, epsilon = 1e-15);
        assert_eq!(q.nearest, Point2::new(0.0, 0.5));
        assert_eq!(q.edge_id, 3);
        assert!(d.distance_to_boundary(Point2::new(1.5, 0.5)).is_err());
    }

    #[test]
    fn square_arc_coordinates() {
        let d = unit_square();
        assert_eq!(d.arc_coordinate(Point2::new(0.0, 0.0), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            d.arc_coordinate(Point2::new(1.0, 0.5), 1).unwrap(),
            1.5,
            epsilon = 1e-15
        );
        // The closing vertex of the last edge wraps to zero.
        assert_eq!(d.arc_coordinate(Point2::new(0.0, 0.0), 3).unwrap(), 0.0);
        assert!(d.arc_coordinate(Point2::new(0.5, 0.5), 0).is_err());
    }

    #[test]
    fn source_must_clear_boundary() {
        let d = unit_square();
        let bad = SourceSpec {
            center: Point2::new(0.05, 0.5),
            radius: 0.1,
        };
        assert!(d.clone().with_source(Some(bad)).is_err());
        let outside = SourceSpec {
            center: Point2::new(2.0, 0.5),
            radius: 0.1,
        };
        assert!(d.with_source(Some(outside)).is_err());
    }

    #[test]
    fn default_source_sits_at_centroid() {
        let d = DomainSpec::from_prefractal(PrefractalSpec::new(
            PrefractalFamily::TriadicKochSnowflake,
            3,
            1.0,
        ))
        .unwrap()
        .with_default_source()
        .unwrap();
        let s = d.source().unwrap();
        assert_abs_diff_eq!(s.center.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.center.y, 0.0, epsilon = 1e-12);
        assert_eq!(s.radius, 0.05);
    }
}
