//! Desk-scale experiment front end: occupancy maps, grid search and batch runs.

mod astar;
pub mod bench;

pub use astar::{astar, line_of_sight, prune_path, supercover};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::Point;
use crate::corridor::{build_boxes_from_path, Corridor};
use crate::error::Result;

pub type Cell = [usize; 3];

/// Axis-aligned voxel grid. Cell `(i, j, k)` spans
/// `origin + [i, i+1] × [j, j+1] × [k, k+1] · resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub dims: [usize; 3],
    pub resolution: f64,
    pub origin: [f64; 3],
    pub seed: u64,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(dims: [usize; 3], resolution: f64) -> Self {
        Self { dims, resolution, origin: [0.0; 3], seed: 0, occupied: vec![false; dims[0] * dims[1] * dims[2]] }
    }

    pub fn index(&self, c: Cell) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    pub fn in_bounds(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[self.index(c)]
    }

    pub fn set_occupied(&mut self, c: Cell, value: bool) {
        let i = self.index(c);
        self.occupied[i] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.occupied.len() as f64
    }

    pub fn cell_center(&self, c: Cell) -> Point {
        Point::from_fn(|a, _| self.origin[a] + (c[a] as f64 + 0.5) * self.resolution)
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: &Point) -> Option<Cell> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.resolution).floor();
            if !(f >= 0.0) || f as usize >= self.dims[a] {
                return None;
            }
            c[a] = f as usize;
        }
        Some(c)
    }

    /// World-space extent of the whole grid.
    pub fn bounds(&self) -> (Point, Point) {
        let lo = Point::from(self.origin);
        let hi = Point::from_fn(|a, _| self.origin[a] + self.dims[a] as f64 * self.resolution);
        (lo, hi)
    }

    /// Marks every cell within `radius` (Chebyshev, in cells) of `c` as free.
    pub fn clear_around(&mut self, c: Cell, radius: usize) {
        let lo: Vec<usize> = (0..3).map(|a| c[a].saturating_sub(radius)).collect();
        let hi: Vec<usize> = (0..3).map(|a| (c[a] + radius).min(self.dims[a] - 1)).collect();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    self.set_occupied([i, j, k], false);
                }
            }
        }
    }
}

/// Random map of full-height pillars and floating blocks (2 to 4 cells across), filled until the occupied
/// fraction reaches `density`. Cells around `keep_free` points are cleared afterwards.
pub fn random_map(seed: u64, dims: [usize; 3], resolution: f64, density: f64, keep_free: &[Point]) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(dims, resolution);
    grid.seed = seed;
    let density = density.clamp(0.0, 0.5);
    let total = grid.occupied.len();
    let target = (density * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    while count < target {
        let fx = rng.gen_range(2..=4usize);
        let fy = rng.gen_range(2..=4usize);
        let x0 = rng.gen_range(0..dims[0]);
        let y0 = rng.gen_range(0..dims[1]);
        let (z0, z1) = if rng.gen_bool(0.7) {
            (0, dims[2])
        } else {
            let h = rng.gen_range(1..=dims[2].max(1).min(4));
            let z0 = rng.gen_range(0..=dims[2] - h);
            (z0, z0 + h)
        };
        'fill: for x in x0..(x0 + fx).min(dims[0]) {
            for y in y0..(y0 + fy).min(dims[1]) {
                for z in z0..z1 {
                    if count >= target {
                        break 'fill;
                    }
                    if !grid.is_occupied([x, y, z]) {
                        grid.set_occupied([x, y, z], true);
                        count += 1;
                    }
                }
            }
        }
    }
    for p in keep_free {
        if let Some(c) = grid.cell_of(p) {
            grid.clear_around(c, 2);
        }
    }
    grid
}

/// Random-map parameters in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub size: [f64; 3],
    pub resolution: f64,
    pub density: f64,
    pub seed: u64,
    /// How far (m) each corridor box face may be pushed out from its seed cells.
    pub inflation_limit: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { size: [15.0, 15.0, 4.0], resolution: 0.25, density: 0.15, seed: 0, inflation_limit: 1.5 }
    }
}

impl MapConfig {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| ((self.size[a] / self.resolution).round() as usize).max(1))
    }
}

/// Front-end output for one start/goal pair.
#[derive(Debug, Clone)]
pub struct Plan {
    pub raw_path: Vec<Point>,
    pub waypoints: Vec<Point>,
    pub corridor: Corridor,
}

/// A* search, line-of-sight pruning and box corridor construction. The first and
/// last waypoints are the exact start and goal rather than their cell centers.
pub fn plan_on_map(grid: &OccupancyGrid, start: &Point, goal: &Point, inflation_limit: f64) -> Result<Plan> {
    let raw_path = astar(grid, start, goal)?;
    let mut anchored = raw_path.clone();
    if anchored.len() == 1 {
        anchored = if start == goal { vec![*start] } else { vec![*start, *goal] };
    } else {
        let last = anchored.len() - 1;
        anchored[0] = *start;
        anchored[last] = *goal;
    }
    let waypoints = prune_path(grid, &anchored);
    let corridor = build_boxes_from_path(grid, &waypoints, inflation_limit)?;
    Ok(Plan { raw_path, waypoints, corridor })
}
