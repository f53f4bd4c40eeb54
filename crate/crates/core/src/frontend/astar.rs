use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Cell, OccupancyGrid};
use crate::bspline::Point;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Node {
    f: f64,
    cell: Cell,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest f first, then lexicographically smallest cell.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
    }
}

fn offsets() -> Vec<[i64; 3]> {
    let mut v = Vec::with_capacity(26);
    for dx in -1..=1 {
        for dy in -1..=1 {
            for dz in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

fn free(grid: &OccupancyGrid, c: [i64; 3]) -> bool {
    grid.in_bounds(c) && !grid.is_occupied([c[0] as usize, c[1] as usize, c[2] as usize])
}

/// A diagonal move is allowed only if every cell it sweeps past is free.
fn move_allowed(grid: &OccupancyGrid, c: Cell, d: [i64; 3]) -> bool {
    let base = [c[0] as i64, c[1] as i64, c[2] as i64];
    for mask in 1..8u8 {
        let mut n = base;
        let mut touches = false;
        for a in 0..3 {
            if mask & (1 << a) != 0 {
                if d[a] == 0 {
                    touches = false;
                    break;
                }
                n[a] += d[a];
                touches = true;
            }
        }
        if touches && !free(grid, n) {
            return false;
        }
    }
    true
}

fn check_endpoint(grid: &OccupancyGrid, p: &Point) -> Result<Cell> {
    let c = grid.cell_of(p).ok_or_else(|| Error::InvalidConfig(format!("point {p:?} is outside the grid")))?;
    if grid.is_occupied(c) {
        return Err(Error::OccupiedCell(c));
    }
    Ok(c)
}

/// 26-connected A* with Euclidean edge costs and no corner cutting.
/// Returns the raw path as cell centers from `start`'s cell to `goal`'s cell.
pub fn astar(grid: &OccupancyGrid, start: &Point, goal: &Point) -> Result<Vec<Point>> {
    let s = check_endpoint(grid, start)?;
    let g = check_endpoint(grid, goal)?;
    let res = grid.resolution;
    let h = |c: Cell| -> f64 {
        let d: f64 = (0..3).map(|a| (c[a] as f64 - g[a] as f64).powi(2)).sum();
        d.sqrt() * res
    };
    let n = grid.dims.iter().product();
    let mut g_score = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g_score[grid.index(s)] = 0.0;
    open.push(Node { f: h(s), cell: s });
    let moves = offsets();
    while let Some(Node { cell, .. }) = open.pop() {
        let ci = grid.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == g {
            let mut cells = vec![cell];
            let mut cur = ci;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                let k = cur % grid.dims[2];
                let j = (cur / grid.dims[2]) % grid.dims[1];
                let i = cur / (grid.dims[2] * grid.dims[1]);
                cells.push([i, j, k]);
            }
            cells.reverse();
            return Ok(cells.into_iter().map(|c| grid.cell_center(c)).collect());
        }
        for d in &moves {
            let nc = [cell[0] as i64 + d[0], cell[1] as i64 + d[1], cell[2] as i64 + d[2]];
            if !free(grid, nc) || !move_allowed(grid, cell, *d) {
                continue;
            }
            let nc = [nc[0] as usize, nc[1] as usize, nc[2] as usize];
            let ni = grid.index(nc);
            if closed[ni] {
                continue;
            }
            let step = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt() * res;
            let tentative = g_score[ci] + step;
            if tentative < g_score[ni] {
                g_score[ni] = tentative;
                parent[ni] = ci;
                open.push(Node { f: tentative + h(nc), cell: nc });
            }
        }
    }
    Err(Error::Unreachable)
}

/// Every cell the closed segment `a → b` touches, including cells met only at an
/// edge or a corner. Cells may lie outside the grid.
pub fn supercover(grid: &OccupancyGrid, a: &Point, b: &Point) -> Vec<[i64; 3]> {
    let ga: Vec<f64> = (0..3).map(|k| (a[k] - grid.origin[k]) / grid.resolution).collect();
    let gb: Vec<f64> = (0..3).map(|k| (b[k] - grid.origin[k]) / grid.resolution).collect();
    let mut cur = [ga[0].floor() as i64, ga[1].floor() as i64, ga[2].floor() as i64];
    let end = [gb[0].floor() as i64, gb[1].floor() as i64, gb[2].floor() as i64];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for k in 0..3 {
        let d = gb[k] - ga[k];
        if d > 0.0 {
            step[k] = 1;
            t_max[k] = (cur[k] as f64 + 1.0 - ga[k]) / d;
            t_delta[k] = 1.0 / d;
        } else if d < 0.0 {
            step[k] = -1;
            t_max[k] = (cur[k] as f64 - ga[k]) / d;
            t_delta[k] = -1.0 / d;
        }
    }
    let mut cells = vec![cur];
    let limit = (0..3).map(|k| (end[k] - cur[k]).unsigned_abs() as usize).sum::<usize>() * 4 + 8;
    for _ in 0..limit {
        if cur == end {
            break;
        }
        let t = t_max.iter().copied().fold(f64::INFINITY, f64::min);
        if t > 1.0 + 1e-12 {
            break;
        }
        let tied: Vec<usize> = (0..3).filter(|&k| (t_max[k] - t).abs() <= 1e-9).collect();
        if tied.len() > 1 {
            for mask in 1..(1u8 << tied.len()) - 1 {
                let mut c = cur;
                for (bit, &k) in tied.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        c[k] += step[k];
                    }
                }
                cells.push(c);
            }
        }
        for &k in &tied {
            cur[k] += step[k];
            t_max[k] += t_delta[k];
        }
        cells.push(cur);
    }
    // a segment lying in a cell face also touches the neighbouring layer
    for k in 0..3 {
        if ga[k] == gb[k] && ga[k].fract() == 0.0 {
            let shifted: Vec<[i64; 3]> = cells
                .iter()
                .map(|c| {
                    let mut s = *c;
                    s[k] -= 1;
                    s
                })
                .collect();
            cells.extend(shifted);
        }
    }
    let mut seen = std::collections::HashSet::new();
    cells.retain(|c| seen.insert(*c));
    cells
}

/// True if every cell touched by the segment is inside the grid and free.
pub fn line_of_sight(grid: &OccupancyGrid, a: &Point, b: &Point) -> bool {
    supercover(grid, a, b).into_iter().all(|c| free(grid, c))
}

/// Greedy line-of-sight shortcutting: from each kept waypoint jump to the farthest
/// later waypoint still visible.
pub fn prune_path(grid: &OccupancyGrid, path: &[Point]) -> Vec<Point> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let j = (i + 1..path.len()).rev().find(|&j| j == i + 1 || line_of_sight(grid, &path[i], &path[j])).unwrap();
        out.push(path[j]);
        i = j;
    }
    out
}
