//! Independent oracles shared by the integration tests. None of these call into the
//! library's own evaluation, energy or solver code.
#![allow(dead_code)]

use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splinetraj::bspline::{Point, SplineTrajectory};
use splinetraj::frontend::OccupancyGrid;
use splinetraj::solvers::{LpProblem, QpProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Clamped knot vector built directly from the definition.
pub fn knots_oracle(spans: &[f64], p: usize) -> Vec<f64> {
    let mut k = vec![0.0; p + 1];
    let mut acc = 0.0;
    for s in &spans[..spans.len() - 1] {
        acc += s;
        k.push(acc);
    }
    acc += spans[spans.len() - 1];
    k.extend(std::iter::repeat(acc).take(p + 1));
    k
}

fn frac(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `d^k/dt^k N_{i,p}(t)` by the Cox–de Boor recursion, with the degree-0 indicator
/// pinned to knot interval `mu` so that closed segment ends evaluate the piece itself.
pub fn basis(knots: &[f64], mu: usize, i: usize, p: usize, k: usize, t: f64) -> f64 {
    if p == 0 {
        return if k == 0 && i == mu { 1.0 } else { 0.0 };
    }
    if k == 0 {
        let a = frac(t - knots[i], knots[i + p] - knots[i]) * basis(knots, mu, i, p - 1, 0, t);
        let b = frac(knots[i + p + 1] - t, knots[i + p + 1] - knots[i + 1]) * basis(knots, mu, i + 1, p - 1, 0, t);
        a + b
    } else {
        let pf = p as f64;
        pf * (frac(1.0, knots[i + p] - knots[i]) * basis(knots, mu, i, p - 1, k - 1, t)
            - frac(1.0, knots[i + p + 1] - knots[i + 1]) * basis(knots, mu, i + 1, p - 1, k - 1, t))
    }
}

/// Segment containing `t` (right-closed at the end of the domain).
pub fn segment_of(spans: &[f64], t: f64) -> usize {
    let mut acc = 0.0;
    for (j, s) in spans.iter().enumerate() {
        acc += s;
        if t < acc {
            return j;
        }
    }
    spans.len() - 1
}

/// `order`-th derivative inside segment `seg` at absolute time `t` (trajectories start at 0).
pub fn eval_in_segment(traj: &SplineTrajectory, seg: usize, t: f64, order: usize) -> Point {
    let p = traj.degree();
    let knots = knots_oracle(traj.spans(), p);
    let mu = seg + p;
    traj.control_points()
        .iter()
        .enumerate()
        .fold(Point::zeros(), |acc, (i, q)| acc + q * basis(&knots, mu, i, p, order, t))
}

pub fn eval_oracle(traj: &SplineTrajectory, t: f64, order: usize) -> Point {
    eval_in_segment(traj, segment_of(traj.spans(), t - traj.t_start()), t - traj.t_start(), order)
}

/// `∫‖jerk‖² dt` by the trapezoid rule with about `nodes` points spread over the segments
/// in proportion to their length.
pub fn energy_quadrature(traj: &SplineTrajectory, nodes: usize) -> f64 {
    let total: f64 = traj.spans().iter().sum();
    let mut start = 0.0;
    let mut e = 0.0;
    for (seg, &h) in traj.spans().iter().enumerate() {
        let n = ((nodes as f64 * h / total).round() as usize).max(2);
        let dt = h / (n - 1) as f64;
        let mut s = 0.0;
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            s += w * eval_in_segment(traj, seg, start + j as f64 * dt, 3).norm_squared();
        }
        e += s * dt;
        start += h;
    }
    e
}

/// `½∫‖jerk‖² dt + ρ·ΣT` from the quadrature oracle.
pub fn objective_oracle(traj: &SplineTrajectory, rho: f64) -> f64 {
    0.5 * energy_quadrature(traj, 2000) + rho * traj.spans().iter().sum::<f64>()
}

/// Central-difference gradient of [`objective_oracle`] over axis-major `Q` then `T`.
pub fn gradient_oracle(traj: &SplineTrajectory, rho: f64) -> DVector<f64> {
    let np = traj.control_points().len();
    let m = traj.spans().len();
    let mut g = DVector::zeros(3 * np + m);
    let f = |pts: Vec<Point>, spans: Vec<f64>| {
        objective_oracle(&SplineTrajectory::new(traj.degree(), pts, spans, 0.0).unwrap(), rho)
    };
    for axis in 0..3 {
        for i in 0..np {
            let h = 1e-4;
            let mut plus = traj.control_points().to_vec();
            let mut minus = plus.clone();
            plus[i][axis] += h;
            minus[i][axis] -= h;
            g[axis * np + i] = (f(plus, traj.spans().to_vec()) - f(minus, traj.spans().to_vec())) / (2.0 * h);
        }
    }
    for i in 0..m {
        let h = 1e-5 * traj.spans()[i];
        let mut plus = traj.spans().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        g[3 * np + i] =
            (f(traj.control_points().to_vec(), plus) - f(traj.control_points().to_vec(), minus)) / (2.0 * h);
    }
    g
}

/// Classical uniform B-spline basic matrix of degree `p`: rows are powers of `u`,
/// columns control points.
pub fn uniform_matrix(p: usize) -> DMatrix<f64> {
    let binom = |n: usize, k: usize| -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
    };
    let fact: f64 = (1..=p).map(|v| v as f64).product();
    DMatrix::from_fn(p + 1, p + 1, |i, j| {
        let mut s = 0.0;
        for l in j..=p {
            let sign = if (l - j) % 2 == 0 { 1.0 } else { -1.0 };
            s += ((p - l) as f64).powi((p - i) as i32) * sign * binom(p + 1, l - j);
        }
        binom(p, i) * s / fact
    })
}

/// Random clamped trajectory starting at `t = 0`.
pub fn random_trajectory(r: &mut impl Rng, degree: usize, segments: usize) -> SplineTrajectory {
    let np = segments + degree;
    let pts = (0..np).map(|_| Point::new(r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-2.0..2.0))).collect();
    let spans = (0..segments).map(|_| r.gen_range(0.2..2.0)).collect();
    SplineTrajectory::new(degree, pts, spans, 0.0).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Brute-force strictly convex QP: every subset of active inequalities, KKT solve,
/// keep the feasible point with non-negative multipliers of least objective.
pub fn qp_bruteforce(p: &QpProblem) -> Option<DVector<f64>> {
    let n = p.hessian.nrows();
    let me = p.a_eq.nrows();
    let mi = p.g_ineq.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        rhs.rows_mut(0, n).copy_from(&(-&p.linear));
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = p.a_eq[(r, c)];
                kkt[(c, n + r)] = p.a_eq[(r, c)];
            }
            rhs[n + r] = p.b_eq[r];
        }
        for (s, &r) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + me + s, c)] = p.g_ineq[(r, c)];
                kkt[(c, n + me + s)] = p.g_ineq[(r, c)];
            }
            rhs[n + me + s] = p.h_ineq[r];
        }
        let Some(sol) = kkt.clone().full_piv_lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let duals_ok = (0..act.len()).all(|s| sol[n + me + s] >= -1e-9);
        let feasible = (&p.g_ineq * &x - &p.h_ineq).iter().all(|v| *v <= 1e-9)
            && (me == 0 || (&p.a_eq * &x - &p.b_eq).amax() <= 1e-9);
        if duals_ok && feasible {
            let obj = 0.5 * x.dot(&(&p.hessian * &x)) + p.linear.dot(&x);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Feasible vertices of `G x ≤ h`, `A x = b`, `x ≥ lower` (finite lower bounds only),
/// by enumerating every choice of active rows.
pub fn lp_vertices(p: &LpProblem) -> Vec<DVector<f64>> {
    let n = p.cost.len();
    // every constraint as a row `a·x ≤ b`; equalities are forced active
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for r in 0..p.g_ineq.nrows() {
        rows.push((p.g_ineq.row(r).transpose(), p.h_ineq[r]));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = -1.0;
        rows.push((e, -p.lower[j]));
    }
    let eqs: Vec<(DVector<f64>, f64)> = (0..p.a_eq.nrows()).map(|r| (p.a_eq.row(r).transpose(), p.b_eq[r])).collect();
    let feasible = |x: &DVector<f64>| {
        rows.iter().all(|(a, b)| a.dot(x) <= b + 1e-9 * (1.0 + b.abs()))
            && eqs.iter().all(|(a, b)| (a.dot(x) - b).abs() <= 1e-9 * (1.0 + b.abs()))
    };
    let mut out = Vec::new();
    let Some(free) = n.checked_sub(eqs.len()) else { return out };
    if free > rows.len() {
        return out;
    }
    let mut pick: Vec<usize> = (0..free).collect();
    loop {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (r, (row, rhs)) in eqs.iter().chain(pick.iter().map(|&i| &rows[i])).enumerate() {
            a.row_mut(r).copy_from(&row.transpose());
            b[r] = *rhs;
        }
        let lu = a.full_piv_lu();
        if lu.is_invertible() {
            if let Some(x) = lu.solve(&b) {
                if feasible(&x) {
                    out.push(x);
                }
            }
        }
        // next combination of `free` rows out of `rows.len()`
        let m = rows.len();
        let k = pick.len();
        let Some(i) = (0..k).rev().find(|&i| pick[i] < m - k + i) else { break };
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
    out
}

/// Least objective over the feasible vertices.
pub fn lp_bruteforce(p: &LpProblem) -> Option<f64> {
    lp_vertices(p).iter().map(|x| p.cost.dot(x)).min_by(f64::total_cmp)
}

/// Dijkstra over the 26-connected free cells with Euclidean edge costs; path length
/// in meters between cell centers, or `None` if unreachable.
pub fn dijkstra_length(grid: &OccupancyGrid, start: [usize; 3], goal: [usize; 3]) -> Option<f64> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let [dx, dy, dz] = grid.dims;
    let idx = |c: [usize; 3]| (c[0] * dy + c[1]) * dz + c[2];
    let mut dist = vec![f64::INFINITY; dx * dy * dz];
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = 0.0;
    heap.push(Item(0.0, idx(start)));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let c = [u / (dy * dz), (u / dz) % dy, u % dz];
        if c == goal {
            return Some(d * grid.resolution);
        }
        for ox in -1i64..=1 {
            for oy in -1i64..=1 {
                for oz in -1i64..=1 {
                    if ox == 0 && oy == 0 && oz == 0 {
                        continue;
                    }
                    let nc = [c[0] as i64 + ox, c[1] as i64 + oy, c[2] as i64 + oz];
                    if !grid.in_bounds(nc) {
                        continue;
                    }
                    let nc = [nc[0] as usize, nc[1] as usize, nc[2] as usize];
                    if grid.is_occupied(nc) {
                        continue;
                    }
                    // no corner cutting: every partial move along a subset of the axes must be free too
                    let o = [ox, oy, oz];
                    let blocked = (1..7u8).any(|mask| {
                        let mut q = [c[0] as i64, c[1] as i64, c[2] as i64];
                        for a in 0..3 {
                            if mask >> a & 1 == 1 {
                                q[a] += o[a];
                            }
                        }
                        q != [c[0] as i64, c[1] as i64, c[2] as i64]
                            && (!grid.in_bounds(q) || grid.is_occupied([q[0] as usize, q[1] as usize, q[2] as usize]))
                    });
                    if blocked {
                        continue;
                    }
                    let nd = d + ((ox * ox + oy * oy + oz * oz) as f64).sqrt();
                    let v = idx(nc);
                    if nd < dist[v] {
                        dist[v] = nd;
                        heap.push(Item(nd, v));
                    }
                }
            }
        }
    }
    None
}

/// Strictly convex QP with a known feasible point.
pub fn random_qp(r: &mut impl Rng) -> QpProblem {
    let n = r.gen_range(1..=8);
    let mi = r.gen_range(0..=10);
    let me = r.gen_range(0..=2.min(n - 1));
    let b = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let hessian = b.transpose() * b + DMatrix::identity(n, n) * 0.1;
    let linear = DVector::from_fn(n, |_, _| r.gen_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
    let g_ineq = DMatrix::from_fn(mi, n, |_, _| r.gen_range(-1.0..1.0));
    let h_ineq = &g_ineq * &x0 + DVector::from_fn(mi, |_, _| r.gen_range(0.0..0.5));
    let a_eq = DMatrix::from_fn(me, n, |_, _| r.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    QpProblem { hessian, linear, g_ineq, h_ineq, a_eq, b_eq }
}

/// Bounded LP (box rows on every variable) with a known feasible point.
pub fn random_lp(r: &mut impl Rng) -> LpProblem {
    let n = r.gen_range(1..=8);
    let mi = r.gen_range(0..=6);
    let me = r.gen_range(0..=1.min(n - 1));
    let lower: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..0.0)).collect();
    let x0 = DVector::from_fn(n, |i, _| lower[i] + r.gen_range(0.1..1.0));
    let mut g = DMatrix::zeros(mi + n, n);
    let mut h = DVector::zeros(mi + n);
    for i in 0..mi {
        for j in 0..n {
            g[(i, j)] = r.gen_range(-1.0..1.0);
        }
        h[i] = (g.row(i) * &x0)[0] + r.gen_range(0.0..0.5);
    }
    for j in 0..n {
        g[(mi + j, j)] = 1.0;
        h[mi + j] = x0[j] + r.gen_range(0.1..2.0);
    }
    let cost = DVector::from_fn(n, |_, _| r.gen_range(-3.0..3.0));
    let a_eq = DMatrix::from_fn(me, n, |_, _| r.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    LpProblem { cost, g_ineq: g, h_ineq: h, a_eq, b_eq, lower }
}
