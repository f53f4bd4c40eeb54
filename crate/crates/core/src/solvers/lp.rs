//! Two-phase dense tableau simplex.
//!
//! Problem:
//! ```text
//!     minimize   cᵀ x
//!     subject to G x ≤ h
//!                A x = b
//!                x ≥ lower        (lower may be −∞)
//! ```
//! Entering variable: most negative reduced cost, lowest index on ties; after a run
//! of degenerate pivots the rule falls back to Bland (lowest index), which cannot cycle.
//! Leaving variable: minimum ratio, lowest basic-variable index on ties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{debug_dump, SolveResult, SolveStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub cost: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Per-variable lower bounds; `f64::NEG_INFINITY` marks a free variable.
    pub lower: Vec<f64>,
}

impl LpProblem {
    pub fn new(cost: DVector<f64>, g_ineq: DMatrix<f64>, h_ineq: DVector<f64>, lower: Vec<f64>) -> Self {
        let n = cost.len();
        Self { cost, g_ineq, h_ineq, a_eq: DMatrix::zeros(0, n), b_eq: DVector::zeros(0), lower }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.cost.len();
        if self.g_ineq.ncols() != n
            || self.g_ineq.nrows() != self.h_ineq.len()
            || self.a_eq.ncols() != n
            || self.a_eq.nrows() != self.b_eq.len()
            || self.lower.len() != n
        {
            return Err(Error::DimensionMismatch(format!(
                "c {n}, G {:?}, h {}, A {:?}, b {}, lower {}",
                self.g_ineq.shape(),
                self.h_ineq.len(),
                self.a_eq.shape(),
                self.b_eq.len(),
                self.lower.len()
            )));
        }
        if self.lower.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::DimensionMismatch("lower bounds must be finite or −∞".into()));
        }
        Ok(())
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

/// Column bookkeeping for mapping standard-form variables back to `x`.
enum ColumnMap {
    Shifted(usize),
    Positive(usize),
    Negative(usize),
}

struct Tableau {
    /// rows × (cols + 1); the last column is the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    degenerate_run: usize,
    bland: bool,
}

enum PivotResult {
    Optimal,
    Unbounded,
    MaxIter,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let pv = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= pv;
        }
        let pivot_row = self.t[row].clone();
        for (r, line) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pvv) in line.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pvv;
                }
                line[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// `c_j − c_Bᵀ B⁻¹ a_j`
    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        let mut d = cost[j];
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                d -= cb * self.t[r][j];
            }
        }
        d
    }

    /// Minimizes `cost · y` over the current basis; `allowed` masks eligible entering columns.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], iterations: &mut usize, max_iter: usize) -> PivotResult {
        // reduced costs, carried through the pivots
        let mut reduced: Vec<f64> = (0..self.cols).map(|j| if allowed[j] { self.reduced_cost(cost, j) } else { 0.0 }).collect();
        loop {
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..self.cols {
                if !allowed[j] {
                    continue;
                }
                let d = reduced[j];
                if self.bland {
                    if d < -COST_TOL {
                        entering = Some(j);
                        break;
                    }
                } else if d < best {
                    best = d;
                    entering = Some(j);
                }
            }
            let Some(col) = entering else {
                // confirm against freshly computed reduced costs
                let fresh: Vec<f64> = (0..self.cols).map(|j| if allowed[j] { self.reduced_cost(cost, j) } else { 0.0 }).collect();
                if fresh.iter().any(|d| *d < -COST_TOL) {
                    reduced = fresh;
                    continue;
                }
                return PivotResult::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12 * (1.0 + lratio.abs())
                                || (ratio <= lratio + 1e-12 * (1.0 + lratio.abs()) && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else { return PivotResult::Unbounded };
            *iterations += 1;
            if *iterations > max_iter {
                return PivotResult::MaxIter;
            }
            if ratio.abs() <= 1e-14 {
                self.degenerate_run += 1;
                if self.degenerate_run > DEGENERATE_RUN {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            self.pivot(row, col);
            let dc = reduced[col];
            for (d, a) in reduced.iter_mut().zip(&self.t[row]) {
                *d -= dc * a;
            }
            reduced[col] = 0.0;
            // keep the basic solution non-negative against round-off
            for line in self.t.iter_mut() {
                let last = line.len() - 1;
                if line[last] < 0.0 && line[last] > -1e-12 {
                    line[last] = 0.0;
                }
            }
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<SolveResult> {
    solve(problem, None)
}

/// Lexicographic LP: minimizes `cost` first, then `secondary` over the optimal face
/// of the first objective. The second stage only lets columns with zero reduced
/// primary cost enter, so the primary objective does not move.
pub fn solve_lp_lex(problem: &LpProblem, secondary: &DVector<f64>) -> Result<SolveResult> {
    if secondary.len() != problem.num_vars() {
        return Err(Error::DimensionMismatch(format!("secondary cost {} for {} variables", secondary.len(), problem.num_vars())));
    }
    solve(problem, Some(secondary))
}

fn solve(problem: &LpProblem, secondary: Option<&DVector<f64>>) -> Result<SolveResult> {
    problem.validate()?;
    debug_dump("lp", problem);
    let n = problem.num_vars();

    // Standard-form columns for the structural variables.
    let mut colmap = Vec::new();
    for j in 0..n {
        if problem.lower[j].is_finite() {
            colmap.push(ColumnMap::Shifted(j));
        } else {
            colmap.push(ColumnMap::Positive(j));
            colmap.push(ColumnMap::Negative(j));
        }
    }
    let ns = colmap.len();
    let shift = |row: &[f64]| -> f64 {
        row.iter()
            .zip(&problem.lower)
            .filter(|(_, l)| l.is_finite())
            .map(|(a, l)| a * l)
            .sum()
    };
    let expand = |row: &[f64]| -> Vec<f64> {
        colmap
            .iter()
            .map(|c| match c {
                ColumnMap::Shifted(j) | ColumnMap::Positive(j) => row[*j],
                ColumnMap::Negative(j) => -row[*j],
            })
            .collect()
    };

    // Presolve: drop inequality rows implied by the lower bounds.
    struct Row {
        coeffs: Vec<f64>,
        rhs: f64,
        is_eq: bool,
    }
    let mut rows = Vec::new();
    for i in 0..problem.h_ineq.len() {
        let g: Vec<f64> = problem.g_ineq.row(i).iter().copied().collect();
        let rhs = problem.h_ineq[i] - shift(&g);
        let coeffs = expand(&g);
        let bounded_max = coeffs.iter().all(|a| *a <= 0.0);
        if bounded_max && 0.0 <= rhs + FEAS_TOL * (1.0 + rhs.abs()) {
            // max of the row over y ≥ 0 is 0 ≤ rhs
            continue;
        }
        if coeffs.iter().all(|a| *a == 0.0) {
            return Ok(SolveResult::failed(SolveStatus::Infeasible, n, 0));
        }
        rows.push(Row { coeffs, rhs, is_eq: false });
    }
    for i in 0..problem.b_eq.len() {
        let a: Vec<f64> = problem.a_eq.row(i).iter().copied().collect();
        let rhs = problem.b_eq[i] - shift(&a);
        rows.push(Row { coeffs: expand(&a), rhs, is_eq: true });
    }

    // Columns: structural (ns) | slacks (one per inequality row) | artificials.
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| !r.is_eq).count();
    let needs_art: Vec<bool> = rows.iter().map(|r| r.is_eq || r.rhs < 0.0).collect();
    let n_art = needs_art.iter().filter(|b| **b).count();
    let cols = ns + n_slack + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let (mut slack_idx, mut art_idx) = (ns, ns + n_slack);
    for (r, row) in rows.iter().enumerate() {
        let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
        for (c, a) in row.coeffs.iter().enumerate() {
            t[r][c] = sign * a;
        }
        t[r][cols] = sign * row.rhs;
        if !row.is_eq {
            t[r][slack_idx] = sign;
            if !needs_art[r] {
                basis[r] = slack_idx;
            }
            slack_idx += 1;
        }
        if needs_art[r] {
            t[r][art_idx] = 1.0;
            basis[r] = art_idx;
            art_idx += 1;
        }
    }
    let mut tab = Tableau { t, basis, cols, degenerate_run: 0, bland: false };
    let max_iter = 50 * (m + cols) + 100;
    let mut iterations = 0;

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(ns + n_slack) {
            *c = 1.0;
        }
        let allowed = vec![true; cols];
        match tab.optimize(&phase1, &allowed, &mut iterations, max_iter) {
            PivotResult::Optimal => {}
            PivotResult::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, iterations)),
            PivotResult::Unbounded => unreachable!("phase one objective is bounded below by zero"),
        }
        let infeas: f64 = (0..m).filter(|r| tab.basis[*r] >= ns + n_slack).map(|r| tab.rhs(r)).sum();
        let scale = 1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeas > FEAS_TOL * scale {
            return Ok(SolveResult::failed(SolveStatus::Infeasible, n, iterations));
        }
        // drive remaining (zero-level) artificials out of the basis; drop redundant rows
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= ns + n_slack {
                if let Some(c) = (0..ns + n_slack).find(|&c| tab.t[r][c].abs() > 1e-9) {
                    tab.pivot(r, c);
                    r += 1;
                } else {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                }
            } else {
                r += 1;
            }
        }
        tab.degenerate_run = 0;
        tab.bland = false;
    }

    let mut cost = vec![0.0; cols];
    let cexp = expand(problem.cost.as_slice());
    cost[..ns].copy_from_slice(&cexp);
    let mut allowed = vec![true; cols];
    for a in allowed.iter_mut().skip(ns + n_slack) {
        *a = false;
    }
    match tab.optimize(&cost, &allowed, &mut iterations, max_iter) {
        PivotResult::Optimal => {}
        PivotResult::Unbounded => return Err(Error::Unbounded),
        PivotResult::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, iterations)),
    }

    if let Some(sec) = secondary {
        for (j, a) in allowed.iter_mut().enumerate() {
            if *a && tab.reduced_cost(&cost, j) > COST_TOL {
                *a = false;
            }
        }
        let mut cost2 = vec![0.0; cols];
        cost2[..ns].copy_from_slice(&expand(sec.as_slice()));
        tab.degenerate_run = 0;
        tab.bland = false;
        match tab.optimize(&cost2, &allowed, &mut iterations, max_iter) {
            PivotResult::Optimal => {}
            PivotResult::Unbounded => return Err(Error::Unbounded),
            PivotResult::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, iterations)),
        }
    }

    let mut y = vec![0.0; cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(r);
    }
    let mut x: Vec<f64> = problem.lower.iter().map(|l| if l.is_finite() { *l } else { 0.0 }).collect();
    for (c, map) in colmap.iter().enumerate() {
        match map {
            ColumnMap::Shifted(j) | ColumnMap::Positive(j) => x[*j] += y[c],
            ColumnMap::Negative(j) => x[*j] -= y[c],
        }
    }
    let objective = problem.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(SolveResult { status: SolveStatus::Optimal, x, objective, iterations, ineq_duals: Vec::new(), eq_duals: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_lower_bound() {
        // min t s.t. t ≥ 3 written as a row
        let p = LpProblem::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DVector::from_vec(vec![-3.0]),
            vec![f64::NEG_INFINITY],
        );
        let r = solve_lp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bounds_only() {
        let lb = vec![0.5, 1.5, 2.0, 0.1];
        let p = LpProblem::new(DVector::from_element(4, 1.0), DMatrix::zeros(0, 4), DVector::zeros(0), lb.clone());
        let r = solve_lp(&p).unwrap();
        assert!(r.is_optimal());
        for (x, l) in r.x.iter().zip(&lb) {
            assert_abs_diff_eq!(*x, *l, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(r.objective, 4.1, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x ≥ 0, x ≤ −1
        let p = LpProblem::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![-1.0]),
            vec![0.0],
        );
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);
        // min −x, x ≥ 0 only
        let p = LpProblem::new(DVector::from_vec(vec![-1.0]), DMatrix::zeros(0, 1), DVector::zeros(0), vec![0.0]);
        assert!(matches!(solve_lp(&p), Err(Error::Unbounded)));
    }

    #[test]
    fn equality_rows_and_free_variables() {
        // min x + 2y, x + y = 4, x − y ≤ 2, y free, x ≥ 0 → x = 3, y = 1
        let mut p = LpProblem::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_vec(vec![2.0]),
            vec![0.0, f64::NEG_INFINITY],
        );
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_vec(vec![4.0]);
        let r = solve_lp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lexicographic_tie_break() {
        // min x + y, x + y ≥ 2, x, y ≥ 0: optimal face is a segment; then min y
        let p = LpProblem::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            DVector::from_vec(vec![-2.0]),
            vec![0.0, 0.0],
        );
        let r = solve_lp_lex(&p, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[1], 0.0, epsilon = 1e-12);
        let r = solve_lp_lex(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(r.x[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_redundant_equalities() {
        let mut p = LpProblem::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(0, 2), DVector::zeros(0), vec![0.0, 0.0]);
        p.a_eq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        p.b_eq = DVector::from_vec(vec![1.0, 2.0]);
        let r = solve_lp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-12);
    }
}
