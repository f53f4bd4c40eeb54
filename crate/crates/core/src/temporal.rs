//! Knot-span LP: minimize total time subject to velocity, acceleration and jerk rows
//! linearized around the previous spans, a per-span trust region, and a total-time cap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{differentiate_points, Point};
use crate::error::{Error, Result};
use crate::solvers::{solve_lp_lex, LpProblem, SolveResult, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinodynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
}

impl KinodynamicLimits {
    pub fn validate(&self) -> Result<()> {
        if [self.v_max, self.a_max, self.j_max].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("kinodynamic limits must be positive: {self:?}")))
        }
    }
}

/// Square-root decay `γ_k = γ₀ / √k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub gamma0: f64,
}

impl DecaySchedule {
    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / (k.max(1) as f64).sqrt()
    }
}

/// Rows `C T ≥ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerRows {
    pub coeffs: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

fn window_rows(num_spans: usize, count: usize, lo_offset: isize, bound: impl Fn(usize) -> f64) -> LowerRows {
    let mut coeffs = DMatrix::zeros(count, num_spans);
    let mut bounds = DVector::zeros(count);
    for i in 0..count {
        let lo = (i as isize + lo_offset).max(0) as usize;
        let hi = i.min(num_spans - 1);
        for j in lo..=hi {
            coeffs[(i, j)] = 1.0;
        }
        bounds[i] = bound(i);
    }
    LowerRows { coeffs, bounds }
}

fn inf_norm(v: &Point) -> f64 {
    v.amax()
}

/// `Σ_{l=i−p+1..i} Δt_l ≥ p ‖Q_{i+1} − Q_i‖∞ / V_max` for `i = 0..n−1`. Exact in `T`.
pub fn velocity_rows(points: &[Point], degree: usize, num_spans: usize, limits: &KinodynamicLimits) -> LowerRows {
    let p = degree as f64;
    window_rows(num_spans, points.len() - 1, 1 - degree as isize, |i| {
        p * inf_norm(&(points[i + 1] - points[i])) / limits.v_max
    })
}

/// `Σ_{l=i−p+2..i} Δt_l ≥ (p−1) ‖V_{i+1}(T_k) − V_i(T_k)‖∞ / A_max` for `i = 0..n−2`.
pub fn accel_rows(points: &[Point], spans_k: &[f64], degree: usize, limits: &KinodynamicLimits) -> Result<LowerRows> {
    let v = differentiate_points(points, degree, spans_k)?;
    let p1 = degree as f64 - 1.0;
    Ok(window_rows(spans_k.len(), v.len() - 1, 2 - degree as isize, |i| {
        p1 * inf_norm(&(v[i + 1] - v[i])) / limits.a_max
    }))
}

/// `Σ_{l=i−p+3..i} Δt_l ≥ (p−2) ‖A_{i+1}(T_k) − A_i(T_k)‖∞ / J_max` for `i = 0..n−3`.
pub fn jerk_rows(points: &[Point], spans_k: &[f64], degree: usize, limits: &KinodynamicLimits) -> Result<LowerRows> {
    let v = differentiate_points(points, degree, spans_k)?;
    let a = differentiate_points(&v, degree - 1, spans_k)?;
    let p2 = degree as f64 - 2.0;
    Ok(window_rows(spans_k.len(), a.len() - 1, 3 - degree as isize, |i| {
        p2 * inf_norm(&(a[i + 1] - a[i])) / limits.j_max
    }))
}

/// Per-span lower bounds `Δt_i ≥ (1 − γ) Δt_{i,k}`.
pub fn trust_rows(spans_k: &[f64], gamma: f64) -> Vec<f64> {
    spans_k.iter().map(|t| (1.0 - gamma) * t).collect()
}

/// Largest ratios `‖V_i‖∞/V_max`, `‖A_i‖∞/A_max`, `‖J_i‖∞/J_max` over all derivative control points.
pub fn limit_ratios(points: &[Point], spans: &[f64], degree: usize, limits: &KinodynamicLimits) -> Result<[f64; 3]> {
    let v = differentiate_points(points, degree, spans)?;
    let a = differentiate_points(&v, degree - 1, spans)?;
    let j = differentiate_points(&a, degree - 2, spans)?;
    let worst = |pts: &[Point], lim: f64| pts.iter().map(inf_norm).fold(0.0, f64::max) / lim;
    Ok([worst(&v, limits.v_max), worst(&a, limits.a_max), worst(&j, limits.j_max)])
}

/// Knot LP with the accel/jerk rows linearized at `spans_lin`; trust region and cap use `spans_k`.
/// An infinite `t_cap` omits the cap row.
#[allow(clippy::too_many_arguments)]
pub fn assemble_lp_at(
    points: &[Point],
    spans_k: &[f64],
    spans_lin: &[f64],
    degree: usize,
    limits: &KinodynamicLimits,
    gamma: f64,
    t_cap: f64,
    guidance_t: Option<&DVector<f64>>,
) -> Result<LpProblem> {
    let m1 = spans_k.len();
    let cost = match guidance_t {
        Some(g) if g.len() != m1 => {
            return Err(Error::DimensionMismatch(format!("temporal guidance of length {} for {m1} spans", g.len())))
        }
        Some(g) => g.map(|v| 1.0 + v),
        None => DVector::from_element(m1, 1.0),
    };
    let families = [
        velocity_rows(points, degree, m1, limits),
        accel_rows(points, spans_lin, degree, limits)?,
        jerk_rows(points, spans_lin, degree, limits)?,
    ];
    let capped = t_cap.is_finite() as usize;
    let rows = capped + families.iter().map(|f| f.bounds.len()).sum::<usize>();
    let mut g = DMatrix::zeros(rows, m1);
    let mut h = DVector::zeros(rows);
    if capped == 1 {
        g.row_mut(0).fill(1.0);
        h[0] = t_cap;
    }
    let mut r = capped;
    for f in &families {
        for i in 0..f.bounds.len() {
            g.row_mut(r).copy_from(&(-f.coeffs.row(i)));
            h[r] = -f.bounds[i];
            r += 1;
        }
    }
    Ok(LpProblem::new(cost, g, h, trust_rows(spans_k, gamma)))
}

/// Knot LP linearized at the previous spans.
pub fn assemble_lp(
    points: &[Point],
    spans_k: &[f64],
    degree: usize,
    limits: &KinodynamicLimits,
    gamma: f64,
    t_cap: f64,
    guidance_t: Option<&DVector<f64>>,
) -> Result<LpProblem> {
    assemble_lp_at(points, spans_k, spans_k, degree, limits, gamma, t_cap, guidance_t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnotUpdate {
    Accepted { spans: Vec<f64>, passes: usize },
    Failed { status: SolveStatus, passes: usize },
}

/// Relative slack allowed when checking acceleration and jerk at the new spans.
pub const PLUG_BACK_TOL: f64 = 1e-9;

/// Appends `C T ≥ b` to the inequality block of `lp`.
fn push_lower_rows(lp: &mut LpProblem, rows: &LowerRows) {
    let (r0, n) = lp.g_ineq.shape();
    let extra = rows.bounds.len();
    let g = std::mem::replace(&mut lp.g_ineq, DMatrix::zeros(0, 0)).resize_vertically(r0 + extra, 0.0);
    lp.g_ineq = g;
    lp.h_ineq = std::mem::replace(&mut lp.h_ineq, DVector::zeros(0)).resize_vertically(r0 + extra, 0.0);
    for i in 0..extra {
        for j in 0..n {
            lp.g_ineq[(r0 + i, j)] = -rows.coeffs[(i, j)];
        }
        lp.h_ineq[r0 + i] = -rows.bounds[i];
    }
}

/// Among the optimal solutions of `lp`, the one closest to `anchor` in the 1-norm.
/// The knot LP mostly prices total time, so its optimal face is usually not a single
/// point; this keeps spans that the cost does not care about where they were.
/// Solved as a lexicographic LP in `x = anchor + p − m`, `p, m ≥ 0`.
pub fn nearest_optimal(lp: &LpProblem, anchor: &[f64]) -> Result<SolveResult> {
    let n = lp.num_vars();
    if anchor.len() != n {
        return Err(Error::DimensionMismatch(format!("anchor of length {} for {n} variables", anchor.len())));
    }
    let a = DVector::from_column_slice(anchor);
    let bounded: Vec<usize> = (0..n).filter(|i| lp.lower[*i].is_finite()).collect();
    // rows implied by the lower bounds would lose that structure after the split
    let implied = |r: usize| {
        let g = lp.g_ineq.row(r);
        g.iter().zip(&lp.lower).all(|(c, l)| *c == 0.0 || (*c < 0.0 && l.is_finite()))
            && g.iter().zip(&lp.lower).filter(|(c, _)| **c != 0.0).map(|(c, l)| c * l).sum::<f64>() <= lp.h_ineq[r]
    };
    let kept: Vec<usize> = (0..lp.g_ineq.nrows()).filter(|r| !implied(*r)).collect();
    let g_kept = lp.g_ineq.select_rows(&kept);
    let rows = kept.len();
    let mut g = DMatrix::zeros(rows + bounded.len(), 2 * n);
    g.view_mut((0, 0), (rows, n)).copy_from(&g_kept);
    g.view_mut((0, n), (rows, n)).copy_from(&(-&g_kept));
    let mut h = DVector::zeros(rows + bounded.len());
    h.rows_mut(0, rows).copy_from(&(lp.h_ineq.select_rows(&kept) - &g_kept * &a));
    for (r, &i) in bounded.iter().enumerate() {
        // −p_i + m_i ≤ a_i − lower_i
        g[(rows + r, i)] = -1.0;
        g[(rows + r, n + i)] = 1.0;
        h[rows + r] = anchor[i] - lp.lower[i];
    }
    let mut a_eq = DMatrix::zeros(lp.a_eq.nrows(), 2 * n);
    a_eq.view_mut((0, 0), lp.a_eq.shape()).copy_from(&lp.a_eq);
    a_eq.view_mut((0, n), lp.a_eq.shape()).copy_from(&(-&lp.a_eq));
    let b_eq = &lp.b_eq - &lp.a_eq * &a;
    let mut cost = DVector::zeros(2 * n);
    cost.rows_mut(0, n).copy_from(&lp.cost);
    cost.rows_mut(n, n).copy_from(&(-&lp.cost));
    let split = LpProblem { cost, g_ineq: g, h_ineq: h, a_eq, b_eq, lower: vec![0.0; 2 * n] };
    let mut res = solve_lp_lex(&split, &DVector::from_element(2 * n, 1.0))?;
    if res.is_optimal() {
        res.x = (0..n).map(|i| anchor[i] + res.x[i] - res.x[n + i]).collect();
        res.objective = lp.cost.iter().zip(&res.x).map(|(c, x)| c * x).sum();
    } else {
        res.x.truncate(n);
    }
    Ok(res)
}

/// Solves the knot LP. If acceleration or jerk limits are violated at the new spans,
/// rows linearized there are added to the LP (earlier rows are kept, which prevents
/// cycling) and it is re-solved, up to `max_passes` solves in total; a solution that
/// still violates them is reported as failed.
#[allow(clippy::too_many_arguments)]
pub fn optimize_knots(
    points: &[Point],
    spans_k: &[f64],
    degree: usize,
    limits: &KinodynamicLimits,
    gamma: f64,
    t_cap: f64,
    guidance_t: Option<&DVector<f64>>,
    max_passes: usize,
) -> Result<KnotUpdate> {
    let mut lp = assemble_lp(points, spans_k, degree, limits, gamma, t_cap, guidance_t)?;
    let mut passes = 0;
    while passes < max_passes.max(1) {
        passes += 1;
        let res = nearest_optimal(&lp, spans_k)?;
        if !res.is_optimal() {
            return Ok(KnotUpdate::Failed { status: res.status, passes });
        }
        let spans = res.x;
        if spans.iter().any(|t| !(*t > 0.0)) {
            return Ok(KnotUpdate::Failed { status: SolveStatus::Infeasible, passes });
        }
        let [_, ra, rj] = limit_ratios(points, &spans, degree, limits)?;
        if ra <= 1.0 + PLUG_BACK_TOL && rj <= 1.0 + PLUG_BACK_TOL {
            return Ok(KnotUpdate::Accepted { spans, passes });
        }
        push_lower_rows(&mut lp, &accel_rows(points, &spans, degree, limits)?);
        push_lower_rows(&mut lp, &jerk_rows(points, &spans, degree, limits)?);
    }
    Ok(KnotUpdate::Failed { status: SolveStatus::Infeasible, passes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn limits() -> KinodynamicLimits {
        KinodynamicLimits { v_max: 3.0, a_max: 4.0, j_max: 10.0 }
    }

    #[test]
    fn velocity_row_bound() {
        let pts = vec![Point::zeros(), Point::zeros(), Point::new(2.0, -1.0, 0.0), Point::new(2.0, -1.0, 0.0)];
        let rows = velocity_rows(&pts, 3, 1, &limits());
        assert_eq!(rows.bounds[0], 0.0);
        assert_abs_diff_eq!(rows.bounds[1], 2.0, epsilon = 1e-15);
        assert_eq!(rows.coeffs[(1, 0)], 1.0);
    }

    #[test]
    fn window_bookkeeping_for_cubic() {
        let pts: Vec<Point> = (0..9).map(|k| Point::new((k * k) as f64, 0.0, 0.0)).collect();
        let spans = vec![1.0; 6];
        let a = accel_rows(&pts, &spans, 3, &limits()).unwrap();
        let j = jerk_rows(&pts, &spans, 3, &limits()).unwrap();
        assert_eq!(a.bounds.len(), 7);
        assert_eq!(j.bounds.len(), 6);
        // accel row 3 covers spans 2 and 3; jerk row 3 covers span 3 only
        assert_eq!(a.coeffs.row(3).iter().copied().collect::<Vec<_>>(), vec![0., 0., 1., 1., 0., 0.]);
        assert_eq!(j.coeffs.row(3).iter().copied().collect::<Vec<_>>(), vec![0., 0., 0., 1., 0., 0.]);
        // row 0 windows clip at the clamped start
        assert_eq!(a.coeffs.row(0).iter().copied().collect::<Vec<_>>(), vec![1., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn constant_derivatives_give_vacuous_rows() {
        let pts = vec![Point::repeat(1.0); 7];
        let spans = vec![0.5; 4];
        assert!(accel_rows(&pts, &spans, 3, &limits()).unwrap().bounds.iter().all(|b| *b == 0.0));
        assert!(jerk_rows(&pts, &spans, 3, &limits()).unwrap().bounds.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn trust_bounds() {
        assert_abs_diff_eq!(trust_rows(&[1.0], 0.3)[0], 0.7, epsilon = 1e-15);
        assert_eq!(trust_rows(&[2.0, 3.0], 0.0), vec![2.0, 3.0]);
        let s = DecaySchedule { gamma0: 0.3 };
        assert_abs_diff_eq!(s.gamma(1), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gamma(4), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gamma(9), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn row_count_and_cost() {
        let pts: Vec<Point> = (0..8).map(|k| Point::new(k as f64, 0.0, 0.0)).collect();
        let spans = vec![1.0; 5];
        let lp = assemble_lp(&pts, &spans, 3, &limits(), 0.2, 5.0, None).unwrap();
        let n = 7;
        assert_eq!(lp.h_ineq.len(), 1 + n + (n - 1) + (n - 2));
        assert_eq!(lp.lower.len(), 5);
        assert!(lp.cost.iter().all(|c| *c == 1.0));
    }

    #[test]
    fn vacuous_rows_hit_trust_bounds() {
        let pts = vec![Point::zeros(); 7];
        let spans = vec![1.0, 2.0, 0.5, 1.5];
        match optimize_knots(&pts, &spans, 3, &limits(), 0.3, 5.0, None, 4).unwrap() {
            KnotUpdate::Accepted { spans: out, .. } => {
                for (o, s) in out.iter().zip(&spans) {
                    assert_abs_diff_eq!(*o, 0.7 * s, epsilon = 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn velocity_floor_above_cap_fails() {
        let pts: Vec<Point> = (0..7).map(|k| Point::new(10.0 * k as f64, 0.0, 0.0)).collect();
        let spans = vec![1.0; 4];
        let r = optimize_knots(&pts, &spans, 3, &limits(), 0.3, 4.0, None, 4).unwrap();
        assert!(matches!(r, KnotUpdate::Failed { status: SolveStatus::Infeasible, .. }));
    }

    #[test]
    fn accepted_spans_respect_all_limits() {
        let pts: Vec<Point> = (0..10).map(|k| Point::new(k as f64, ((k as f64) * 0.9).sin() * 2.0, 0.1 * (k * k) as f64)).collect();
        let spans = vec![2.0; 7];
        let lim = limits();
        match optimize_knots(&pts, &spans, 3, &lim, 0.3, 14.0, None, 8).unwrap() {
            KnotUpdate::Accepted { spans: out, .. } => {
                let r = limit_ratios(&pts, &out, 3, &lim).unwrap();
                assert!(r.iter().all(|v| *v <= 1.0 + 1e-9), "{r:?}");
                assert!(out.iter().sum::<f64>() <= 14.0 + 1e-9);
                for (o, s) in out.iter().zip(&spans) {
                    assert!(*o >= 0.7 * s - 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }
}
