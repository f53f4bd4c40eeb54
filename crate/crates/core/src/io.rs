//! File formats: trajectory JSON, sampled CSV, and problem files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bspline::{Point, SplineTrajectory};
use crate::corridor::Corridor;
use crate::driver::{DriverConfig, ProblemSpec};
use crate::error::{Error, Result};
use crate::frontend::{plan_on_map, random_map, MapConfig};
use crate::spatial::BoundaryConditions;
use crate::temporal::KinodynamicLimits;
use crate::validator::Sample;

/// Floating-point text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub degree: usize,
    pub control_points: Vec<[f64; 3]>,
    pub spans: Vec<f64>,
    pub t_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_regions: Option<Vec<usize>>,
}

impl TrajectoryFile {
    pub fn from_trajectory(traj: &SplineTrajectory, segment_regions: Option<Vec<usize>>) -> Self {
        Self {
            degree: traj.degree(),
            control_points: traj.control_points().iter().map(|q| [q.x, q.y, q.z]).collect(),
            spans: traj.spans().to_vec(),
            t_start: traj.t_start(),
            segment_regions,
        }
    }

    pub fn to_trajectory(&self) -> Result<SplineTrajectory> {
        SplineTrajectory::new(
            self.degree,
            self.control_points.iter().map(|q| Point::from(*q)).collect(),
            self.spans.clone(),
            self.t_start,
        )
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::result::Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub const SAMPLES_HEADER: &str = "t,x,y,z,vx,vy,vz,ax,ay,az,jx,jy,jz";

pub fn samples_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(samples.len() * 300);
    out.push_str(SAMPLES_HEADER);
    out.push('\n');
    for s in samples {
        let mut fields = vec![fmt_f64(s.t)];
        for v in [s.position, s.velocity, s.acceleration, s.jerk] {
            fields.extend(v.iter().map(|c| fmt_f64(*c)));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Problem description: either an explicit corridor (with optional waypoints) or a
/// random map on which waypoints and a box corridor are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    #[serde(default)]
    pub v_start: [f64; 3],
    #[serde(default)]
    pub v_goal: [f64; 3],
    #[serde(default)]
    pub waypoints: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub corridor: Option<Corridor>,
    #[serde(default)]
    pub map: Option<MapConfig>,
    pub limits: KinodynamicLimits,
    #[serde(default)]
    pub optimizer: DriverConfig,
}

impl ProblemFile {
    /// Builds the optimizer input, running the map front end when needed.
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let start = Point::from(self.start);
        let goal = Point::from(self.goal);
        let bc = BoundaryConditions { p_s: self.start, p_f: self.goal, v_s: self.v_start, v_f: self.v_goal };
        let (waypoints, corridor) = match (&self.corridor, &self.map) {
            (Some(c), None) => {
                let wp = match &self.waypoints {
                    Some(w) => w.iter().map(|p| Point::from(*p)).collect(),
                    None => vec![start, goal],
                };
                (wp, c.clone())
            }
            (None, Some(m)) => {
                let grid = random_map(m.seed, m.dims(), m.resolution, m.density, &[start, goal]);
                let plan = plan_on_map(&grid, &start, &goal, m.inflation_limit)?;
                (plan.waypoints, plan.corridor)
            }
            _ => return Err(Error::InvalidConfig("problem needs exactly one of `corridor` or `map`".into())),
        };
        Ok(ProblemSpec { waypoints, corridor, bc, limits: self.limits, config: self.optimizer.clone() })
    }
}
