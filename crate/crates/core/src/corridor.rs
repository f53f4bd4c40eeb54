//! Safe flight corridors: convex regions, corridor construction from grid paths,
//! and the per-control-point constraint rows used by the control-point QP.
//!
//! Each segment `j` of a degree-`p` spline is mapped to one region `r(j)`. A control
//! point `Q_k` supports segments `max(0, k−p) ..= min(k, m)` and receives the halfspace
//! rows of all their regions, so by the convex hull property every segment lies inside
//! its own region.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::Point;
use crate::error::{Error, Result};
use crate::frontend::{supercover, Cell, OccupancyGrid};
use crate::solvers::{solve_lp, LpProblem};

/// `n · x ≤ d` with unit `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub n: [f64; 3],
    pub d: f64,
}

impl Halfspace {
    pub fn new(n: Point, d: f64) -> Result<Self> {
        let norm = n.norm();
        if !(norm > 1e-12) || !d.is_finite() {
            return Err(Error::InvalidConfig(format!("degenerate halfspace n = {n:?}, d = {d}")));
        }
        let u = n / norm;
        Ok(Self { n: [u.x, u.y, u.z], d: d / norm })
    }

    pub fn normal(&self) -> Point {
        Point::from(self.n)
    }

    /// `n · p − d`; positive outside.
    pub fn residual(&self, p: &Point) -> f64 {
        self.normal().dot(p) - self.d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexRegion {
    pub halfspaces: Vec<Halfspace>,
}

/// Largest radius reported by the interior probe; keeps unbounded regions finite.
const PROBE_RADIUS_CAP: f64 = 1e3;

impl ConvexRegion {
    pub fn new(halfspaces: Vec<Halfspace>) -> Self {
        Self { halfspaces }
    }

    pub fn from_box(min: Point, max: Point) -> Self {
        let mut hs = Vec::with_capacity(6);
        for a in 0..3 {
            let mut n = [0.0; 3];
            n[a] = 1.0;
            hs.push(Halfspace { n, d: max[a] });
            n[a] = -1.0;
            hs.push(Halfspace { n, d: -min[a] });
        }
        Self { halfspaces: hs }
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.residual(p) <= tol)
    }

    /// Largest halfspace residual (≤ 0 inside).
    pub fn max_residual(&self, p: &Point) -> f64 {
        self.halfspaces.iter().map(|h| h.residual(p)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bounds of an axis-aligned box region, or `None` if any normal is oblique.
    pub fn as_box(&self) -> Option<(Point, Point)> {
        let mut lo = Point::repeat(f64::NEG_INFINITY);
        let mut hi = Point::repeat(f64::INFINITY);
        for h in &self.halfspaces {
            let axis = (0..3).find(|&a| h.n[a].abs() == 1.0)?;
            if h.n[axis] > 0.0 {
                hi[axis] = hi[axis].min(h.d);
            } else {
                lo[axis] = lo[axis].max(-h.d);
            }
        }
        Some((lo, hi))
    }

    /// Intersection of several regions (halfspaces stacked).
    pub fn intersection<'a>(regions: impl IntoIterator<Item = &'a ConvexRegion>) -> ConvexRegion {
        ConvexRegion { halfspaces: regions.into_iter().flat_map(|r| r.halfspaces.iter().copied()).collect() }
    }

    /// Center and radius of the largest inscribed ball (radius capped), or `None` if empty.
    pub fn interior_probe(&self) -> Option<(Point, f64)> {
        let k = self.halfspaces.len();
        let mut g = DMatrix::zeros(k + 1, 4);
        let mut h = DVector::zeros(k + 1);
        for (r, hs) in self.halfspaces.iter().enumerate() {
            for a in 0..3 {
                g[(r, a)] = hs.n[a];
            }
            g[(r, 3)] = 1.0;
            h[r] = hs.d;
        }
        g[(k, 3)] = 1.0;
        h[k] = PROBE_RADIUS_CAP;
        let lp = LpProblem::new(
            DVector::from_vec(vec![0.0, 0.0, 0.0, -1.0]),
            g,
            h,
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
        );
        match solve_lp(&lp) {
            Ok(r) if r.is_optimal() => Some((Point::new(r.x[0], r.x[1], r.x[2]), r.x[3])),
            _ => None,
        }
    }

    /// Parameter interval `[s0, s1] ⊆ [0, 1]` of the segment `a + s(b − a)` inside the region.
    pub fn clip_segment(&self, a: &Point, b: &Point) -> Option<(f64, f64)> {
        let (mut s0, mut s1) = (0.0f64, 1.0f64);
        let d = b - a;
        for h in &self.halfspaces {
            let num = h.d - h.normal().dot(a);
            let den = h.normal().dot(&d);
            if den.abs() < 1e-15 {
                if num < -1e-12 {
                    return None;
                }
            } else if den > 0.0 {
                s1 = s1.min(num / den);
            } else {
                s0 = s0.max(num / den);
            }
            if s0 > s1 + 1e-12 {
                return None;
            }
        }
        Some((s0, s1.max(s0)))
    }
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum RegionRepr {
    Halfspaces { halfspaces: Vec<HalfspaceRepr> },
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HalfspaceRepr {
    n: [f64; 3],
    d: f64,
}

impl<'de> Deserialize<'de> for ConvexRegion {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match RegionRepr::deserialize(deserializer)? {
            RegionRepr::Halfspaces { halfspaces } => {
                let hs = halfspaces
                    .into_iter()
                    .map(|h| Halfspace::new(Point::from(h.n), h.d))
                    .collect::<Result<Vec<_>>>()
                    .map_err(serde::de::Error::custom)?;
                Ok(ConvexRegion::new(hs))
            }
            RegionRepr::Box { min, max } => {
                if (0..3).any(|a| !(min[a] <= max[a])) {
                    return Err(serde::de::Error::custom("box min must not exceed max"));
                }
                Ok(ConvexRegion::from_box(Point::from(min), Point::from(max)))
            }
        }
    }
}

/// Ordered sequence of convex regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corridor {
    pub regions: Vec<ConvexRegion>,
}

impl Corridor {
    pub fn new(regions: Vec<ConvexRegion>) -> Self {
        Self { regions }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Checks non-empty interiors, consecutive overlaps, and that `start`/`goal`
    /// lie in the first/last region.
    pub fn validate(&self, start: &Point, goal: &Point, tol: f64) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::CorridorGap("corridor has no regions".into()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            match r.interior_probe() {
                Some((_, rad)) if rad > 1e-9 => {}
                _ => return Err(Error::CorridorGap(format!("region {i} has an empty interior"))),
            }
        }
        for i in 1..self.regions.len() {
            let both = ConvexRegion::intersection([&self.regions[i - 1], &self.regions[i]]);
            match both.interior_probe() {
                Some((_, rad)) if rad > 1e-9 => {}
                _ => return Err(Error::CorridorGap(format!("regions {} and {i} do not overlap", i - 1))),
            }
        }
        if !self.regions[0].contains(start, tol) {
            return Err(Error::Infeasible("start lies outside the first corridor region".into()));
        }
        if !self.regions[self.regions.len() - 1].contains(goal, tol) {
            return Err(Error::Infeasible("goal lies outside the last corridor region".into()));
        }
        Ok(())
    }
}

/// Halfspace rows for each control point, plus the segment → region map they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConstraintSet {
    pub rows: Vec<Vec<Halfspace>>,
    pub segment_regions: Vec<usize>,
}

impl PointConstraintSet {
    pub fn num_rows(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Stacked `G Q ≤ h` over the axis-major variable vector
    /// `[Q_0x … Q_nx, Q_0y … Q_ny, Q_0z … Q_nz]`.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let np = self.rows.len();
        let total = self.num_rows();
        let mut g = DMatrix::zeros(total, 3 * np);
        let mut h = DVector::zeros(total);
        let mut r = 0;
        for (k, rows) in self.rows.iter().enumerate() {
            for hs in rows {
                for a in 0..3 {
                    g[(r, a * np + k)] = hs.n[a];
                }
                h[r] = hs.d;
                r += 1;
            }
        }
        (g, h)
    }

    /// Largest row violation over all control points (≤ 0 when satisfied).
    pub fn max_violation(&self, points: &[Point]) -> f64 {
        self.rows
            .iter()
            .zip(points)
            .flat_map(|(rows, p)| rows.iter().map(move |h| h.residual(p)))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Monotone map of `segments` onto `regions` in near-equal contiguous blocks.
pub fn even_split(segments: usize, regions: usize) -> Vec<usize> {
    (0..segments).map(|j| j * regions / segments.max(1)).collect()
}

fn check_segment_map(map: &[usize], regions: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::AssignmentInfeasible(msg));
    if map.is_empty() {
        return bad("empty segment map".into());
    }
    if map[0] != 0 || *map.last().unwrap() + 1 != regions {
        return bad(format!("segment map must start at region 0 and end at region {}", regions - 1));
    }
    for w in map.windows(2) {
        if w[1] < w[0] || w[1] > w[0] + 1 {
            return bad(format!("segment map steps from region {} to {}", w[0], w[1]));
        }
    }
    Ok(())
}

/// Per-control-point rows for a spline with `num_points` control points of degree `degree`.
/// `segment_regions` defaults to [`even_split`].
pub fn assign_regions(
    corridor: &Corridor,
    num_points: usize,
    degree: usize,
    segment_regions: Option<&[usize]>,
) -> Result<PointConstraintSet> {
    if corridor.is_empty() {
        return Err(Error::CorridorGap("corridor has no regions".into()));
    }
    if num_points <= degree {
        return Err(Error::DimensionMismatch(format!("{num_points} control points for degree {degree}")));
    }
    let segments = num_points - degree;
    let map = match segment_regions {
        Some(m) => m.to_vec(),
        None => {
            if segments < corridor.len() {
                return Err(Error::AssignmentInfeasible(format!(
                    "{segments} segments cannot cover {} regions",
                    corridor.len()
                )));
            }
            even_split(segments, corridor.len())
        }
    };
    if map.len() != segments {
        return Err(Error::DimensionMismatch(format!("segment map of length {} for {segments} segments", map.len())));
    }
    check_segment_map(&map, corridor.len())?;
    let mut rows = Vec::with_capacity(num_points);
    for k in 0..num_points {
        let lo = k.saturating_sub(degree);
        let hi = k.min(segments - 1);
        let mut regs: Vec<usize> = map[lo..=hi].to_vec();
        regs.dedup();
        if regs.len() > 1 {
            let both = ConvexRegion::intersection(regs.iter().map(|&r| &corridor.regions[r]));
            if both.interior_probe().is_none() {
                return Err(Error::AssignmentInfeasible(format!("control point {k} must lie in regions {regs:?}, which do not intersect")));
            }
        }
        rows.push(regs.iter().flat_map(|&r| corridor.regions[r].halfspaces.iter().copied()).collect());
    }
    Ok(PointConstraintSet { rows, segment_regions: map })
}

#[derive(Debug, Clone, Copy)]
struct CellBox {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl CellBox {
    fn around(c: Cell) -> Self {
        Self { lo: c, hi: c }
    }

    fn extended(&self, c: Cell) -> Self {
        let mut b = *self;
        for a in 0..3 {
            b.lo[a] = b.lo[a].min(c[a]);
            b.hi[a] = b.hi[a].max(c[a]);
        }
        b
    }

    fn volume(&self) -> usize {
        (0..3).map(|a| self.hi[a] + 1 - self.lo[a]).product()
    }

    fn contains(&self, other: &CellBox) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    fn is_free(&self, grid: &OccupancyGrid) -> bool {
        for i in self.lo[0]..=self.hi[0] {
            for j in self.lo[1]..=self.hi[1] {
                for k in self.lo[2]..=self.hi[2] {
                    if grid.is_occupied([i, j, k]) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Grows one face by a cell layer if the layer is free and within `limit` cells of `seed`.
    fn try_grow(&mut self, grid: &OccupancyGrid, seed: &CellBox, face: usize, limit: usize) -> bool {
        let axis = face / 2;
        let mut layer = *self;
        if face % 2 == 0 {
            if self.lo[axis] == 0 || seed.lo[axis] - (self.lo[axis] - 1) > limit {
                return false;
            }
            layer.lo[axis] = self.lo[axis] - 1;
            layer.hi[axis] = layer.lo[axis];
        } else {
            if self.hi[axis] + 1 >= grid.dims[axis] || self.hi[axis] + 1 - seed.hi[axis] > limit {
                return false;
            }
            layer.hi[axis] = self.hi[axis] + 1;
            layer.lo[axis] = layer.hi[axis];
        }
        if !layer.is_free(grid) {
            return false;
        }
        if face % 2 == 0 {
            self.lo[axis] -= 1;
        } else {
            self.hi[axis] += 1;
        }
        true
    }

    fn to_region(self, grid: &OccupancyGrid) -> ConvexRegion {
        let lo = Point::from_fn(|a, _| grid.origin[a] + self.lo[a] as f64 * grid.resolution);
        let hi = Point::from_fn(|a, _| grid.origin[a] + (self.hi[a] + 1) as f64 * grid.resolution);
        ConvexRegion::from_box(lo, hi)
    }
}

/// Axis-aligned box corridor around a collision-free polyline.
///
/// Starting from a cell touched by the polyline, the following cells are taken
/// greedily while their bounding box stays free; that seed is inflated face by face,
/// round robin, until blocked or until a face has moved `inflation_limit` meters. The
/// next seed starts at the last covered path cell, so consecutive boxes overlap.
/// Boxes contained in a neighbour are dropped.
pub fn build_boxes_from_path(grid: &OccupancyGrid, path: &[Point], inflation_limit: f64) -> Result<Corridor> {
    if path.is_empty() {
        return Err(Error::DegenerateTrajectory("empty path".into()));
    }
    let mut cells: Vec<Cell> = Vec::new();
    let mut push = |c: [i64; 3]| -> Result<()> {
        if !grid.in_bounds(c) {
            return Err(Error::InvalidConfig(format!("path leaves the grid at cell {c:?}")));
        }
        let c = [c[0] as usize, c[1] as usize, c[2] as usize];
        if grid.is_occupied(c) {
            return Err(Error::OccupiedCell(c));
        }
        if cells.last() != Some(&c) {
            cells.push(c);
        }
        Ok(())
    };
    if path.len() == 1 {
        let c = grid.cell_of(&path[0]).ok_or_else(|| Error::InvalidConfig("path point outside the grid".into()))?;
        push([c[0] as i64, c[1] as i64, c[2] as i64])?;
    }
    for w in path.windows(2) {
        for c in supercover(grid, &w[0], &w[1]) {
            push(c)?;
        }
    }

    let limit = (inflation_limit.max(0.0) / grid.resolution + 1e-9).floor() as usize;
    // (box, first and last index of the run of path cells it covers)
    let mut boxes: Vec<(CellBox, usize, usize)> = Vec::new();
    let mut s = 0;
    loop {
        let mut seed = CellBox::around(cells[s]);
        let mut e = s;
        while e + 1 < cells.len() {
            let next = seed.extended(cells[e + 1]);
            if !next.is_free(grid) {
                break;
            }
            seed = next;
            e += 1;
        }
        // a long thin seed can block inflation; shorter prefixes are tried too
        let inflate = |seed: CellBox| {
            let mut b = seed;
            loop {
                let mut grew = false;
                for face in 0..6 {
                    grew |= b.try_grow(grid, &seed, face, limit);
                }
                if !grew {
                    return b;
                }
            }
        };
        let mut b = inflate(seed);
        let mut len = e - s;
        while len > 1 {
            len /= 2;
            let short = (s + 1..=s + len).fold(CellBox::around(cells[s]), |acc, i| acc.extended(cells[i]));
            let cand = inflate(short);
            if cand.volume() > b.volume() {
                b = cand;
            }
        }
        let covers = |i: usize| b.contains(&CellBox::around(cells[i]));
        e = s + (s..cells.len()).take_while(|i| covers(*i)).count() - 1;
        let first = s + 1 - (0..=s).rev().take_while(|i| covers(*i)).count();
        boxes.push((b, first, e));
        if e + 1 >= cells.len() {
            break;
        }
        if e == s {
            return Err(Error::CorridorGap(format!("cells {:?} and {:?} cannot share a box", cells[s], cells[s + 1])));
        }
        s = e;
    }
    // fewest boxes whose covered runs chain from the first to the last path cell
    let mut kept: Vec<CellBox> = vec![boxes[0].0];
    let mut reach = boxes[0].2;
    let mut i = 0;
    while reach + 1 < cells.len() {
        let j = (i + 1..boxes.len())
            .filter(|&j| boxes[j].1 <= reach && boxes[j].2 > reach)
            .max_by_key(|&j| (boxes[j].2, j))
            .expect("the next generated box always extends the chain");
        kept.push(boxes[j].0);
        reach = boxes[j].2;
        i = j;
    }
    Ok(Corridor::new(kept.into_iter().map(|b| b.to_region(grid)).collect()))
}
