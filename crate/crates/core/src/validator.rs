//! Trajectory metrics and constraint-violation ratios.

use serde::{Deserialize, Serialize};

use crate::bspline::{total_jerk_energy, Point, SplineTrajectory};
use crate::corridor::Corridor;
use crate::error::{Error, Result};
use crate::temporal::KinodynamicLimits;

/// Samples per trajectory used when no explicit step is given.
pub const DEFAULT_SAMPLES: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub position: Point,
    pub velocity: Point,
    pub acceleration: Point,
    pub jerk: Point,
}

/// Samples at `t_s, t_s + dt, …` and always at `t_f`.
pub fn sample(traj: &SplineTrajectory, dt: f64) -> Result<Vec<Sample>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("sample step must be positive, got {dt}")));
    }
    let (ts, tf) = (traj.t_start(), traj.t_end());
    let steps = ((tf - ts) / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=steps).map(|i| (ts + i as f64 * dt).min(tf)).collect();
    if tf - times.last().unwrap() > 1e-12 * (1.0 + tf.abs()) {
        times.push(tf);
    } else {
        *times.last_mut().unwrap() = tf;
    }
    times
        .into_iter()
        .map(|t| {
            let [position, velocity, acceleration, jerk] = traj.evaluate_all(t)?;
            Ok(Sample { t, position, velocity, acceleration, jerk })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub sfc_ratio: f64,
    pub vel_ratio: f64,
    pub acc_ratio: f64,
    pub jerk_ratio: f64,
    pub length: f64,
    pub duration: f64,
    /// `∫‖jerk‖² dt / duration`.
    pub energy: f64,
    /// `∫‖jerk‖² dt`.
    pub energy_raw: f64,
    pub samples: usize,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.sfc_ratio == 0.0 && self.vel_ratio == 0.0 && self.acc_ratio == 0.0 && self.jerk_ratio == 0.0
    }

    pub const CSV_HEADER: &'static str = "sfc_ratio,vel_ratio,acc_ratio,jerk_ratio,length,duration,energy,energy_raw";

    pub fn csv_row(&self) -> String {
        [self.sfc_ratio, self.vel_ratio, self.acc_ratio, self.jerk_ratio, self.length, self.duration, self.energy, self.energy_raw]
            .iter()
            .map(|v| crate::io::fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Violation ratios over samples; a sample violates the corridor if it lies outside
/// the region of its segment by more than `tol`, and a kinodynamic limit if the
/// infinity norm exceeds `limit·(1 + tol)`. `dt` defaults to `duration / 5000`.
pub fn check(
    traj: &SplineTrajectory,
    corridor: &Corridor,
    segment_regions: &[usize],
    limits: &KinodynamicLimits,
    dt: Option<f64>,
    tol: f64,
) -> Result<ViolationReport> {
    if segment_regions.len() != traj.num_segments() {
        return Err(Error::DimensionMismatch(format!(
            "segment map of length {} for {} segments",
            segment_regions.len(),
            traj.num_segments()
        )));
    }
    if let Some(r) = segment_regions.iter().find(|r| **r >= corridor.len()) {
        return Err(Error::DimensionMismatch(format!("segment map references region {r} of {}", corridor.len())));
    }
    let dt = dt.unwrap_or(traj.duration() / DEFAULT_SAMPLES as f64);
    let samples = sample(traj, dt)?;
    let (mut sfc, mut vel, mut acc, mut jerk) = (0usize, 0usize, 0usize, 0usize);
    for s in &samples {
        let (seg, _) = traj.locate(s.t)?;
        if corridor.regions[segment_regions[seg]].max_residual(&s.position) > tol {
            sfc += 1;
        }
        if s.velocity.amax() > limits.v_max * (1.0 + tol) {
            vel += 1;
        }
        if s.acceleration.amax() > limits.a_max * (1.0 + tol) {
            acc += 1;
        }
        if s.jerk.amax() > limits.j_max * (1.0 + tol) {
            jerk += 1;
        }
    }
    let count = samples.len() as f64;
    let length = samples.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum();
    let energy_raw = total_jerk_energy(traj)?;
    let duration = traj.duration();
    Ok(ViolationReport {
        sfc_ratio: sfc as f64 / count,
        vel_ratio: vel as f64 / count,
        acc_ratio: acc as f64 / count,
        jerk_ratio: jerk as f64 / count,
        length,
        duration,
        energy: energy_raw / duration,
        energy_raw,
        samples: samples.len(),
    })
}

/// Segment → region map for a trajectory that arrives without one: each segment
/// takes the region its supporting control points violate least.
pub fn nearest_regions(traj: &SplineTrajectory, corridor: &Corridor) -> Result<Vec<usize>> {
    if corridor.is_empty() {
        return Err(Error::DimensionMismatch("empty corridor".into()));
    }
    let p = traj.degree();
    let pts = traj.control_points();
    Ok((0..traj.num_segments())
        .map(|seg| {
            let window = &pts[seg..=seg + p];
            let worst = |r: usize| window.iter().map(|q| corridor.regions[r].max_residual(q)).fold(f64::NEG_INFINITY, f64::max);
            (0..corridor.len()).min_by(|a, b| worst(*a).total_cmp(&worst(*b))).unwrap()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::ConvexRegion;

    fn line(duration: f64) -> SplineTrajectory {
        // Greville-placed points on x: constant speed 2 m/s
        let spans = vec![duration / 4.0; 4];
        let knots = crate::bspline::clamped_knots(&spans, 3, 0.0).unwrap();
        let pts = (0..7).map(|k| Point::new(2.0 * (knots[k + 1] + knots[k + 2] + knots[k + 3]) / 3.0, 0.0, 0.0)).collect();
        SplineTrajectory::new(3, pts, spans, 0.0).unwrap()
    }

    #[test]
    fn sample_count_and_endpoints() {
        let t = line(1.0);
        let s = sample(&t, 0.5).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].position, t.control_points()[0]);
        assert!((s[2].position - t.control_points()[6]).norm() < 1e-12);
        assert_eq!(sample(&t, 0.3).unwrap().len(), 5);
    }

    #[test]
    fn clean_constant_speed_line() {
        let t = line(2.0);
        let corridor = Corridor::new(vec![ConvexRegion::from_box(Point::new(-1.0, -1.0, -1.0), Point::new(5.0, 1.0, 1.0))]);
        let lim = KinodynamicLimits { v_max: 2.0, a_max: 1.0, j_max: 1.0 };
        let r = check(&t, &corridor, &[0; 4], &lim, None, DEFAULT_TOL).unwrap();
        assert!(r.is_clean(), "{r:?}");
        assert!((r.length - 4.0).abs() < 1e-9);
        assert_eq!(r.samples, 5001);
        let slow = KinodynamicLimits { v_max: 1.9, ..lim };
        assert_eq!(check(&t, &corridor, &[0; 4], &slow, None, DEFAULT_TOL).unwrap().vel_ratio, 1.0);
    }

    #[test]
    fn nearest_regions_follow_the_line() {
        let t = line(2.0);
        // x from 0 to 4; first box covers x ≤ 2.5, second x ≥ 1.5
        let corridor = Corridor::new(vec![
            ConvexRegion::from_box(Point::new(-1.0, -1.0, -1.0), Point::new(2.5, 1.0, 1.0)),
            ConvexRegion::from_box(Point::new(1.5, -1.0, -1.0), Point::new(5.0, 1.0, 1.0)),
        ]);
        let r = nearest_regions(&t, &corridor).unwrap();
        assert_eq!(r.first(), Some(&0));
        assert_eq!(r.last(), Some(&1));
    }
}
