//! Control-point QP: jerk energy plus an optional linear guidance term, subject to
//! corridor rows and boundary equalities. Spans are held fixed.
//!
//! Decision variables are stacked axis-major: `[Q_0x … Q_nx, Q_0y … Q_ny, Q_0z … Q_nz]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{derivative_denominator, segment_energy_matrix, Point, SplineTrajectory};
use crate::corridor::PointConstraintSet;
use crate::error::{Error, Result};
use crate::solvers::{solve_qp, QpProblem, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConditions {
    pub p_s: [f64; 3],
    pub p_f: [f64; 3],
    #[serde(default)]
    pub v_s: [f64; 3],
    #[serde(default)]
    pub v_f: [f64; 3],
}

impl BoundaryConditions {
    pub fn at_rest(p_s: Point, p_f: Point) -> Self {
        Self { p_s: p_s.into(), p_f: p_f.into(), v_s: [0.0; 3], v_f: [0.0; 3] }
    }

    pub fn start(&self) -> Point {
        Point::from(self.p_s)
    }

    pub fn goal(&self) -> Point {
        Point::from(self.p_f)
    }
}

/// Flattens control points into the axis-major vector.
pub fn flatten(points: &[Point]) -> DVector<f64> {
    let n = points.len();
    DVector::from_fn(3 * n, |i, _| points[i % n][i / n])
}

pub fn unflatten(x: &[f64]) -> Vec<Point> {
    let n = x.len() / 3;
    (0..n).map(|k| Point::new(x[k], x[n + k], x[2 * n + k])).collect()
}

/// `A Q = b` fixing `Q_0 = p_s`, `Q_n = p_f`, `V_0 = v_s`, `V_{n−1} = v_f` (12 rows).
pub fn boundary_rows(num_points: usize, degree: usize, spans: &[f64], bc: &BoundaryConditions) -> (DMatrix<f64>, DVector<f64>) {
    let n = num_points - 1;
    let p = degree as f64;
    let d0 = derivative_denominator(spans, degree, 0);
    let d1 = derivative_denominator(spans, degree, n - 1);
    let mut a = DMatrix::zeros(12, 3 * num_points);
    let mut b = DVector::zeros(12);
    for axis in 0..3 {
        let off = axis * num_points;
        let r = 4 * axis;
        a[(r, off)] = 1.0;
        b[r] = bc.p_s[axis];
        a[(r + 1, off + n)] = 1.0;
        b[r + 1] = bc.p_f[axis];
        a[(r + 2, off)] = -p / d0;
        a[(r + 2, off + 1)] = p / d0;
        b[r + 2] = bc.v_s[axis];
        a[(r + 3, off + n - 1)] = -p / d1;
        a[(r + 3, off + n)] = p / d1;
        b[r + 3] = bc.v_f[axis];
    }
    (a, b)
}

/// Hessian `H` with `½ xᵀ H x = Σ_j Σ_axis Q_jᵀ W_j Q_j Δt_j`.
pub fn energy_hessian(traj: &SplineTrajectory) -> Result<DMatrix<f64>> {
    let np = traj.control_points().len();
    let p = traj.degree();
    let mut h = DMatrix::zeros(3 * np, 3 * np);
    for seg in 0..traj.num_segments() {
        let w = segment_energy_matrix(traj, seg)?.w * (2.0 * traj.spans()[seg]);
        for axis in 0..3 {
            let off = axis * np + seg;
            for a in 0..=p {
                for b in 0..=p {
                    h[(off + a, off + b)] += w[(a, b)];
                }
            }
        }
    }
    Ok(h)
}

pub fn assemble_qp(
    traj: &SplineTrajectory,
    cons: &PointConstraintSet,
    boundary: (DMatrix<f64>, DVector<f64>),
    guidance_q: Option<&DVector<f64>>,
) -> Result<QpProblem> {
    let np = traj.control_points().len();
    if cons.rows.len() != np {
        return Err(Error::DimensionMismatch(format!("{} constraint blocks for {np} control points", cons.rows.len())));
    }
    let hessian = energy_hessian(traj)?;
    let linear = match guidance_q {
        Some(g) if g.len() != 3 * np => {
            return Err(Error::DimensionMismatch(format!("guidance of length {} for {} variables", g.len(), 3 * np)))
        }
        Some(g) => g.clone(),
        None => DVector::zeros(3 * np),
    };
    let (g_ineq, h_ineq) = cons.stacked();
    let (a_eq, b_eq) = boundary;
    Ok(QpProblem { hessian, linear, g_ineq, h_ineq, a_eq, b_eq })
}

/// Solves the control-point QP for the current spans and returns the new control points.
pub fn optimize_cps(
    traj: &SplineTrajectory,
    cons: &PointConstraintSet,
    bc: &BoundaryConditions,
    guidance_q: Option<&DVector<f64>>,
) -> Result<Vec<Point>> {
    let np = traj.control_points().len();
    let rows = boundary_rows(np, traj.degree(), traj.spans(), bc);
    let qp = assemble_qp(traj, cons, rows, guidance_q)?;
    let res = solve_qp(&qp)?;
    match res.status {
        SolveStatus::Optimal => Ok(unflatten(&res.x)),
        SolveStatus::Infeasible => Err(Error::Infeasible("control-point QP: corridor and boundary rows conflict".into())),
        SolveStatus::MaxIter => Err(Error::Infeasible("control-point QP hit its iteration cap".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{segment_energy, total_jerk_energy};
    use crate::corridor::{assign_regions, ConvexRegion, Corridor};
    use approx::assert_abs_diff_eq;

    fn traj(points: Vec<Point>, spans: Vec<f64>) -> SplineTrajectory {
        SplineTrajectory::new(3, points, spans, 0.0).unwrap()
    }

    #[test]
    fn zero_velocity_rows_pin_second_point() {
        let bc = BoundaryConditions::at_rest(Point::new(1.0, 2.0, 3.0), Point::new(4.0, 5.0, 6.0));
        let (a, b) = boundary_rows(7, 3, &[0.5, 1.0, 0.7, 0.3], &bc);
        assert_eq!(a.shape(), (12, 21));
        // row 2: p(Q_1 − Q_0)/Δt_0 = 0
        assert_abs_diff_eq!(a[(2, 0)], -6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(2, 1)], 6.0, epsilon = 1e-12);
        assert_eq!(b[2], 0.0);
        // row 3: p(Q_6 − Q_5)/Δt_3
        assert_abs_diff_eq!(a[(3, 6)], 10.0, epsilon = 1e-12);
        assert_eq!(b[4], 2.0);
    }

    #[test]
    fn single_segment_hessian() {
        let t = traj(vec![Point::zeros(); 4], vec![1.7]);
        let h = energy_hessian(&t).unwrap();
        let w = segment_energy_matrix(&t, 0).unwrap().w;
        let block = h.view((4, 4), (4, 4)).into_owned();
        assert_abs_diff_eq!(block, w * (2.0 * 1.7), epsilon = 1e-9);
    }

    #[test]
    fn objective_matches_energy_plus_guidance() {
        let pts: Vec<Point> = (0..8).map(|k| Point::new((k as f64).sin(), (k * k) as f64 * 0.1, 0.3 * k as f64)).collect();
        let t = traj(pts.clone(), vec![0.4, 0.9, 0.3, 0.6, 1.1]);
        let cons = assign_regions(&Corridor::new(vec![ConvexRegion::from_box(Point::repeat(-50.0), Point::repeat(50.0))]), 8, 3, None).unwrap();
        let g = DVector::from_fn(24, |i, _| 0.01 * i as f64 - 0.1);
        let rows = boundary_rows(8, 3, t.spans(), &BoundaryConditions::at_rest(pts[0], pts[7]));
        let qp = assemble_qp(&t, &cons, rows, Some(&g)).unwrap();
        let x = flatten(&pts);
        let energy: f64 = (0..t.num_segments()).map(|s| segment_energy(&t, s, &segment_energy_matrix(&t, s).unwrap())).sum();
        assert_abs_diff_eq!(qp.objective(&x), energy + g.dot(&x), epsilon = 1e-10 * (1.0 + energy));
        assert_eq!(unflatten(x.as_slice()), pts);
    }

    #[test]
    fn coincident_endpoints_give_zero_energy() {
        let p = Point::new(1.0, 1.0, 1.0);
        let t = traj(vec![Point::new(0.0, 0.5, 1.5); 8], vec![1.0; 5]);
        let corridor = Corridor::new(vec![ConvexRegion::from_box(Point::zeros(), Point::repeat(2.0))]);
        let cons = assign_regions(&corridor, 8, 3, None).unwrap();
        let q = optimize_cps(&t, &cons, &BoundaryConditions::at_rest(p, p), None).unwrap();
        for qk in &q {
            assert_abs_diff_eq!(*qk, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn straight_corridor_gives_collinear_points() {
        let start = Point::new(0.5, 0.5, 0.5);
        let goal = Point::new(4.5, 0.5, 0.5);
        let corridor = Corridor::new(vec![ConvexRegion::from_box(Point::zeros(), Point::new(5.0, 1.0, 1.0))]);
        let np = 9;
        let init: Vec<Point> = (0..np).map(|k| start + (goal - start) * (k as f64 / 8.0)).collect();
        let t = traj(init, vec![0.8; 6]);
        let cons = assign_regions(&corridor, np, 3, None).unwrap();
        let q = optimize_cps(&t, &cons, &BoundaryConditions::at_rest(start, goal), None).unwrap();
        for qk in &q {
            assert_abs_diff_eq!(qk.y, 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(qk.z, 0.5, epsilon = 1e-9);
        }
        let out = t.with_control_points(q).unwrap();
        assert!(total_jerk_energy(&out).unwrap() <= total_jerk_energy(&t).unwrap() + 1e-9);
    }

    #[test]
    fn start_outside_corridor_is_infeasible() {
        let corridor = Corridor::new(vec![ConvexRegion::from_box(Point::zeros(), Point::repeat(1.0))]);
        let t = traj(vec![Point::repeat(0.5); 7], vec![1.0; 4]);
        let cons = assign_regions(&corridor, 7, 3, None).unwrap();
        let bc = BoundaryConditions::at_rest(Point::repeat(2.0), Point::repeat(0.5));
        assert!(matches!(optimize_cps(&t, &cons, &bc, None), Err(Error::Infeasible(_))));
    }
}
