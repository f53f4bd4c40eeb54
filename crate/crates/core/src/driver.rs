//! Alternating control-point QP / knot LP iteration.
//!
//! Each iteration optionally refreshes the guidance gradient, solves the QP for the
//! control points at fixed spans, then the LP for the spans at fixed control points.
//! The loop stops when the spans move by less than `epsilon` in total (converged),
//! when the LP fails after `min_iters` iterations (early stop, previous iterate
//! returned), or after `max_iters` iterations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bspline::{total_jerk_energy, Point, SplineTrajectory};
use crate::corridor::{assign_regions, ConvexRegion, Corridor, PointConstraintSet};
use crate::error::{Error, Result};
use crate::guidance::{objective, GuidanceState};
use crate::solvers::SolveStatus;
use crate::spatial::{optimize_cps, BoundaryConditions};
use crate::temporal::{optimize_knots, DecaySchedule, KinodynamicLimits, KnotUpdate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    pub degree: usize,
    pub max_iters: usize,
    pub min_iters: usize,
    /// Convergence tolerance on `Σ|T_k − T_{k−1}|` (seconds).
    pub epsilon: f64,
    pub rho: f64,
    pub rho_m: f64,
    pub confidence: f64,
    pub momentum: f64,
    pub gamma0: f64,
    /// Enables the guidance machinery; it is still skipped whenever `rho > rho_m`.
    pub guidance: bool,
    /// Target arc length per spline segment at initialization (meters).
    pub segment_length: f64,
    /// Maximum LP solves per knot update when re-linearizing acceleration/jerk rows.
    pub relinearize_passes: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            max_iters: 50,
            min_iters: 3,
            epsilon: 0.05,
            rho: 512.0,
            rho_m: 100.0,
            confidence: 1.0,
            momentum: 0.5,
            gamma0: 0.1,
            guidance: true,
            segment_length: 1.5,
            relinearize_passes: 16,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.degree < 3 {
            return err("degree must be at least 3");
        }
        if !(self.epsilon > 0.0) {
            return err("epsilon must be positive");
        }
        if self.min_iters < 1 || self.max_iters <= self.min_iters {
            return err("need max_iters > min_iters >= 1");
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return err("gamma0 must lie in (0, 1)");
        }
        if !(self.rho > 0.0) || !(self.confidence >= 0.0) || !(0.0..=1.0).contains(&self.momentum) {
            return err("need rho > 0, confidence >= 0, momentum in [0, 1]");
        }
        if !(self.segment_length > 0.0) {
            return err("segment_length must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub waypoints: Vec<Point>,
    pub corridor: Corridor,
    pub bc: BoundaryConditions,
    pub limits: KinodynamicLimits,
    pub config: DriverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    EarlyStop,
    MaxIterations,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    pub gamma: f64,
    pub total_time: f64,
    pub energy: f64,
    pub objective: f64,
    /// `optimal`, `infeasible` or `max_iter` for the knot LP.
    pub lp_status: SolveStatus,
    pub lp_passes: usize,
    pub span_change: f64,
    pub guided: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: SplineTrajectory,
    pub segment_regions: Vec<usize>,
    pub constraints: PointConstraintSet,
    pub trace: Vec<IterationTrace>,
    pub termination: Termination,
    pub iterations: usize,
    pub initial_time_cap: f64,
}

/// Initial trajectory and its segment → region map.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub trajectory: SplineTrajectory,
    pub segment_regions: Vec<usize>,
    pub time_cap: f64,
    pub degenerate: bool,
}

fn polyline_arcs(waypoints: &[Point]) -> Vec<f64> {
    let mut arcs = vec![0.0];
    for w in waypoints.windows(2) {
        arcs.push(arcs.last().unwrap() + (w[1] - w[0]).norm());
    }
    arcs
}

fn point_at_arc(waypoints: &[Point], arcs: &[f64], s: f64) -> Point {
    let s = s.clamp(0.0, *arcs.last().unwrap());
    let i = match arcs.iter().position(|a| *a >= s) {
        Some(0) | None => return if s <= 0.0 { waypoints[0] } else { *waypoints.last().unwrap() },
        Some(i) => i,
    };
    let len = arcs[i] - arcs[i - 1];
    if len <= 0.0 {
        return waypoints[i];
    }
    let f = (s - arcs[i - 1]) / len;
    waypoints[i - 1] + (waypoints[i] - waypoints[i - 1]) * f
}

/// Arc lengths along the polyline at which the trajectory hands over from region
/// `r` to `r+1`: the midpoint of the first stretch of polyline lying in both.
pub fn region_transitions(waypoints: &[Point], corridor: &Corridor) -> Result<Vec<f64>> {
    let arcs = polyline_arcs(waypoints);
    let mut out = Vec::with_capacity(corridor.len().saturating_sub(1));
    let mut prev = 0.0;
    for r in 0..corridor.len().saturating_sub(1) {
        let both = ConvexRegion::intersection([&corridor.regions[r], &corridor.regions[r + 1]]);
        let mut found = None;
        for (i, w) in waypoints.windows(2).enumerate() {
            let len = arcs[i + 1] - arcs[i];
            if let Some((s0, s1)) = both.clip_segment(&w[0], &w[1]) {
                let (a, b) = (arcs[i] + s0 * len, arcs[i] + s1 * len);
                if b >= prev {
                    found = Some((a.max(prev), b));
                    break;
                }
            }
        }
        let (a, b) = found.ok_or_else(|| Error::CorridorGap(format!("waypoint polyline never passes through the overlap of regions {r} and {}", r + 1)))?;
        prev = 0.5 * (a + b);
        out.push(prev);
    }
    Ok(out)
}

/// Initial control points placed by arc length along the waypoint polyline, with at
/// least `degree` segments per region, uniform spans summing to
/// `polyline_length / (0.5·v_max)`.
pub fn initialize(spec: &ProblemSpec) -> Result<Initialization> {
    let cfg = &spec.config;
    let p = cfg.degree;
    if spec.waypoints.is_empty() {
        return Err(Error::DegenerateTrajectory("no waypoints".into()));
    }
    let waypoints: Vec<Point> = if spec.waypoints.len() == 1 { vec![spec.waypoints[0]; 2] } else { spec.waypoints.clone() };
    let arcs = polyline_arcs(&waypoints);
    let length = *arcs.last().unwrap();
    if length <= 1e-9 {
        let traj = SplineTrajectory::new(p, vec![waypoints[0]; p + 1], vec![1.0], 0.0)?;
        return Ok(Initialization { trajectory: traj, segment_regions: vec![0], time_cap: 1.0, degenerate: true });
    }
    let regions = spec.corridor.len();
    let transitions = region_transitions(&waypoints, &spec.corridor)?;
    let mut bounds = vec![0.0];
    bounds.extend(&transitions);
    bounds.push(length);
    let counts: Vec<usize> =
        bounds.windows(2).map(|w| (((w[1] - w[0]) / cfg.segment_length).ceil() as usize).max(p)).collect();
    let segments: usize = counts.iter().sum();
    let mut map = Vec::with_capacity(segments);
    for (r, c) in counts.iter().enumerate() {
        map.extend(std::iter::repeat(r).take(*c));
    }
    debug_assert_eq!(regions, counts.len());

    // piecewise-linear map from segment coordinate to arc length
    let mut xs = vec![0.0];
    for c in &counts {
        xs.push(xs.last().unwrap() + *c as f64);
    }
    let n = segments + p - 1;
    let points: Vec<Point> = (0..=n)
        .map(|k| {
            let x = k as f64 * segments as f64 / n as f64;
            let r = (0..counts.len()).find(|&r| x <= xs[r + 1]).unwrap_or(counts.len() - 1);
            let f = (x - xs[r]) / (xs[r + 1] - xs[r]);
            point_at_arc(&waypoints, &arcs, bounds[r] + f * (bounds[r + 1] - bounds[r]))
        })
        .collect();
    let time_cap = length / (0.5 * spec.limits.v_max);
    let spans = vec![time_cap / segments as f64; segments];
    let trajectory = SplineTrajectory::new(p, points, spans, 0.0)?;
    Ok(Initialization { trajectory, segment_regions: map, time_cap, degenerate: false })
}

/// `γ_k = γ₀ / √k`.
pub fn update_decay(k: usize, gamma0: f64) -> f64 {
    DecaySchedule { gamma0 }.gamma(k)
}

fn check_spec(spec: &ProblemSpec) -> Result<()> {
    spec.config.validate()?;
    spec.limits.validate()?;
    let (first, last) = (spec.waypoints.first(), spec.waypoints.last());
    match (first, last) {
        (Some(a), Some(b)) if (a - spec.bc.start()).norm() <= 1e-9 && (b - spec.bc.goal()).norm() <= 1e-9 => {}
        _ => return Err(Error::InvalidConfig("waypoints must start at p_s and end at p_f".into())),
    }
    spec.corridor.validate(&spec.bc.start(), &spec.bc.goal(), 1e-9)
}

/// Runs the full iteration.
pub fn run(spec: &ProblemSpec) -> Result<RunOutput> {
    check_spec(spec)?;
    let cfg = &spec.config;
    let init = initialize(spec)?;
    let np = init.trajectory.control_points().len();
    if init.degenerate {
        let single = Corridor::new(vec![spec.corridor.regions[0].clone()]);
        let constraints = assign_regions(&single, np, cfg.degree, Some(&init.segment_regions))?;
        return Ok(RunOutput {
            trajectory: init.trajectory,
            segment_regions: init.segment_regions,
            constraints,
            trace: Vec::new(),
            termination: Termination::Degenerate,
            iterations: 0,
            initial_time_cap: init.time_cap,
        });
    }
    let constraints = assign_regions(&spec.corridor, np, cfg.degree, Some(&init.segment_regions))?;
    let mut traj = init.trajectory;
    let mut time_cap = init.time_cap;
    let mut accepted: Option<SplineTrajectory> = None;
    let mut guidance = GuidanceState::new(cfg.momentum, cfg.confidence, cfg.rho_m);
    let mut trace = Vec::new();
    let finish = |traj: SplineTrajectory, trace: Vec<IterationTrace>, termination, iterations, time_cap| RunOutput {
        trajectory: traj,
        segment_regions: init.segment_regions.clone(),
        constraints: constraints.clone(),
        trace,
        termination,
        iterations,
        initial_time_cap: time_cap,
    };

    for k in 1..=cfg.max_iters {
        let gamma = update_decay(k, cfg.gamma0);
        let guided = cfg.guidance && guidance.active(cfg.rho);
        let (gq, gt) = if guided {
            guidance.update_from(&traj, cfg.rho)?;
            let (gq, gt) = guidance.get(cfg.rho, np);
            (Some(gq), Some(gt))
        } else {
            (None, None)
        };

        let q = match optimize_cps(&traj, &constraints, &spec.bc, gq.as_ref()) {
            Ok(q) => q,
            Err(Error::Infeasible(msg)) if k == 1 => return Err(Error::Infeasible(msg)),
            Err(Error::Infeasible(_)) => {
                let out = accepted.unwrap_or(traj);
                return Ok(finish(out, trace, Termination::EarlyStop, k, time_cap));
            }
            Err(e) => return Err(e),
        };
        let with_q = traj.with_control_points(q)?;

        let knots = |cap: f64| {
            optimize_knots(
                with_q.control_points(),
                with_q.spans(),
                cfg.degree,
                &spec.limits,
                gamma,
                cap,
                gt.as_ref(),
                cfg.relinearize_passes,
            )
        };
        let mut update = knots(if k == 1 { time_cap } else { traj.duration() })?;
        if k == 1 && matches!(update, KnotUpdate::Failed { .. }) {
            // The initial cap is a heuristic; when the first control points need more
            // time, the first LP runs uncapped and its total becomes the cap.
            update = knots(f64::INFINITY)?;
            if let KnotUpdate::Accepted { spans, .. } = &update {
                time_cap = time_cap.max(spans.iter().sum());
            }
        }
        match update {
            KnotUpdate::Failed { status, passes } => {
                trace.push(IterationTrace {
                    k,
                    gamma,
                    total_time: with_q.duration(),
                    energy: total_jerk_energy(&with_q)?,
                    objective: objective(&with_q, cfg.rho)?,
                    lp_status: status,
                    lp_passes: passes,
                    span_change: 0.0,
                    guided,
                });
                if k > cfg.min_iters {
                    let out = accepted.unwrap_or(traj);
                    return Ok(finish(out, trace, Termination::EarlyStop, k, time_cap));
                }
                traj = with_q;
            }
            KnotUpdate::Accepted { spans, passes } => {
                let change: f64 = spans.iter().zip(with_q.spans()).map(|(a, b)| (a - b).abs()).sum();
                let next = with_q.with_spans(spans)?;
                trace.push(IterationTrace {
                    k,
                    gamma,
                    total_time: next.duration(),
                    energy: total_jerk_energy(&next)?,
                    objective: objective(&next, cfg.rho)?,
                    lp_status: SolveStatus::Optimal,
                    lp_passes: passes,
                    span_change: change,
                    guided,
                });
                traj = next;
                accepted = Some(traj.clone());
                if change < cfg.epsilon {
                    return Ok(finish(traj, trace, Termination::Converged, k, time_cap));
                }
            }
        }
    }
    Ok(finish(traj, trace, Termination::MaxIterations, cfg.max_iters, time_cap))
}

/// Writes the trace as JSON lines.
pub fn write_trace(path: &std::path::Path, trace: &[IterationTrace]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trace {
        serde_json::to_writer(&mut f, t)?;
        writeln!(f)?;
    }
    f.flush()
}
