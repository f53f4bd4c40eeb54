//! Batch runs over random maps: one scenario per trial, swept over decay factors,
//! temporal weights and guidance on/off.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{plan_on_map, random_map, MapConfig, OccupancyGrid, Plan};
use crate::bspline::Point;
use crate::driver::{run, DriverConfig, IterationTrace, ProblemSpec, RunOutput, Termination};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::spatial::BoundaryConditions;
use crate::temporal::KinodynamicLimits;
use crate::validator::{check, ViolationReport, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub map: MapConfig,
    pub trials: usize,
    pub seed: u64,
    pub gamma0: Vec<f64>,
    pub rho: Vec<f64>,
    pub guidance: Vec<bool>,
    pub limits: KinodynamicLimits,
    pub optimizer: DriverConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            trials: 1,
            seed: 0,
            gamma0: vec![0.1],
            rho: vec![512.0],
            guidance: vec![true],
            limits: default_limits(),
            optimizer: DriverConfig::default(),
        }
    }
}

pub fn default_limits() -> KinodynamicLimits {
    KinodynamicLimits { v_max: 2.0, a_max: 3.0, j_max: 15.0 }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.gamma0.is_empty() || self.rho.is_empty() || self.guidance.is_empty() {
            return Err(Error::InvalidConfig("sweep lists must not be empty".into()));
        }
        self.limits.validate()
    }
}

/// One start/goal pair on one random map, with its front-end plan.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub start: Point,
    pub goal: Point,
    pub grid: OccupancyGrid,
    pub plan: Plan,
}

impl Scenario {
    pub fn spec(&self, limits: KinodynamicLimits, config: DriverConfig) -> ProblemSpec {
        ProblemSpec {
            waypoints: self.plan.waypoints.clone(),
            corridor: self.plan.corridor.clone(),
            bc: BoundaryConditions::at_rest(self.start, self.goal),
            limits,
            config,
        }
    }
}

/// Seed of trial `index` derived from the base seed (SplitMix64 step).
pub fn trial_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Start near the low-x wall, goal near the high-x wall, random map; redrawn until
/// the front end succeeds.
pub fn make_scenario(map: &MapConfig, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [sx, sy, sz] = map.size;
    let mut last_err = Error::Unreachable;
    for _ in 0..64 {
        let start = Point::new(rng.gen_range(0.5..2.5), rng.gen_range(0.5..sy - 0.5), rng.gen_range(0.5..sz - 0.5));
        let goal = Point::new(sx - rng.gen_range(0.5..2.5), rng.gen_range(0.5..sy - 0.5), rng.gen_range(0.5..sz - 0.5));
        let map_seed: u64 = rng.gen();
        let grid = random_map(map_seed, map.dims(), map.resolution, map.density, &[start, goal]);
        match plan_on_map(&grid, &start, &goal, map.inflation_limit) {
            Ok(plan) => return Ok(Scenario { seed, start, goal, grid, plan }),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub trial: usize,
    pub seed: u64,
    pub gamma0: f64,
    pub rho: f64,
    pub guidance: bool,
    pub status: String,
    pub iterations: usize,
    pub report: Option<ViolationReport>,
    /// Total time never increased across accepted iterations.
    pub monotone_time: bool,
    /// Excluded from the CSV so that reruns are byte-identical.
    pub wall_ms: f64,
    #[serde(skip)]
    pub trace: Vec<IterationTrace>,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "trial,seed,gamma0,rho,guidance,status,iterations,monotone_time,sfc_ratio,vel_ratio,acc_ratio,jerk_ratio,length,duration,energy,energy_raw";

    pub fn converged(&self) -> bool {
        self.status == "converged"
    }

    pub fn csv_row(&self) -> String {
        let metrics = match &self.report {
            Some(r) => r.csv_row(),
            None => vec![""; 8].join(","),
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.seed,
            fmt_f64(self.gamma0),
            fmt_f64(self.rho),
            self.guidance,
            self.status,
            self.iterations,
            self.monotone_time,
            metrics
        )
    }
}

pub fn status_label(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::EarlyStop => "early_stop",
        Termination::MaxIterations => "max_iterations",
        Termination::Degenerate => "degenerate",
    }
}

/// Runs the optimizer on a scenario and measures the result.
pub fn run_scenario(scn: &Scenario, limits: KinodynamicLimits, config: DriverConfig) -> (Result<(RunOutput, ViolationReport)>, f64) {
    let spec = scn.spec(limits, config);
    let t0 = Instant::now();
    let out = run(&spec);
    let wall = t0.elapsed().as_secs_f64() * 1e3;
    let res = out.and_then(|o| {
        let report = check(&o.trajectory, &spec.corridor, &o.segment_regions, &limits, None, DEFAULT_TOL)?;
        Ok((o, report))
    });
    (res, wall)
}

pub fn monotone_time(out: &RunOutput) -> bool {
    let times: Vec<f64> = out.trace.iter().filter(|t| t.lp_status.eq(&crate::solvers::SolveStatus::Optimal)).map(|t| t.total_time).collect();
    times.windows(2).all(|w| w[1] <= w[0] + 1e-9) && times.first().map_or(true, |t| *t <= out.initial_time_cap + 1e-9)
}

/// All rows in deterministic order: trial-major, then `gamma0`, `rho`, `guidance`.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let scenarios: Vec<(usize, u64, Result<Scenario>)> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(config.seed, i);
            (i, seed, make_scenario(&config.map, seed))
        })
        .collect();
    let mut jobs = Vec::new();
    for (i, seed, scn) in &scenarios {
        for &g in &config.gamma0 {
            for &r in &config.rho {
                for &guided in &config.guidance {
                    jobs.push((*i, *seed, scn, g, r, guided));
                }
            }
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(trial, seed, scn, gamma0, rho, guidance)| {
            let base = BenchRow {
                trial,
                seed,
                gamma0,
                rho,
                guidance,
                status: String::new(),
                iterations: 0,
                report: None,
                monotone_time: false,
                wall_ms: 0.0,
                trace: Vec::new(),
            };
            let scn = match scn {
                Ok(s) => s,
                Err(e) => return BenchRow { status: format!("frontend_error: {e}").replace(',', ";"), ..base },
            };
            let cfg = DriverConfig { gamma0, rho, guidance, ..config.optimizer.clone() };
            let (res, wall_ms) = run_scenario(scn, config.limits, cfg);
            match res {
                Ok((out, report)) => BenchRow {
                    status: status_label(out.termination).into(),
                    iterations: out.iterations,
                    monotone_time: monotone_time(&out),
                    report: Some(report),
                    wall_ms,
                    trace: out.trace,
                    ..base
                },
                Err(e) => BenchRow { status: format!("error: {e}").replace(',', ";"), wall_ms, ..base },
            }
        })
        .collect();
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BenchRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-sweep-point aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub gamma0: f64,
    pub rho: f64,
    pub guidance: bool,
    pub runs: usize,
    pub solved: usize,
    pub converged: usize,
    pub mean_length: f64,
    pub mean_duration: f64,
    pub mean_energy: f64,
    pub mean_iterations: f64,
    pub mean_sfc_ratio: f64,
    pub mean_vel_ratio: f64,
    pub mean_acc_ratio: f64,
    pub median_wall_ms: f64,
}

pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, f64, bool)> = Vec::new();
    for r in rows {
        let k = (r.gamma0, r.rho, r.guidance);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(gamma0, rho, guidance)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| (r.gamma0, r.rho, r.guidance) == (gamma0, rho, guidance)).collect();
            let solved: Vec<&ViolationReport> = group.iter().filter_map(|r| r.report.as_ref()).collect();
            let mean = |f: &dyn Fn(&ViolationReport) -> f64| {
                if solved.is_empty() {
                    f64::NAN
                } else {
                    solved.iter().map(|r| f(r)).sum::<f64>() / solved.len() as f64
                }
            };
            let with_report: Vec<&&BenchRow> = group.iter().filter(|r| r.report.is_some()).collect();
            let mut walls: Vec<f64> = with_report.iter().map(|r| r.wall_ms).collect();
            walls.sort_by(f64::total_cmp);
            Aggregate {
                gamma0,
                rho,
                guidance,
                runs: group.len(),
                solved: solved.len(),
                converged: group.iter().filter(|r| r.converged()).count(),
                mean_length: mean(&|r| r.length),
                mean_duration: mean(&|r| r.duration),
                mean_energy: mean(&|r| r.energy),
                mean_iterations: if with_report.is_empty() {
                    f64::NAN
                } else {
                    with_report.iter().map(|r| r.iterations as f64).sum::<f64>() / with_report.len() as f64
                },
                mean_sfc_ratio: mean(&|r| r.sfc_ratio),
                mean_vel_ratio: mean(&|r| r.vel_ratio),
                mean_acc_ratio: mean(&|r| r.acc_ratio),
                median_wall_ms: if walls.is_empty() { f64::NAN } else { walls[walls.len() / 2] },
            }
        })
        .collect()
}
