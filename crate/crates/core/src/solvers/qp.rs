//! Dual active-set QP solver (Goldfarb–Idnani) on dense storage.
//!
//! Problem:
//! ```text
//!     minimize   ½ xᵀ H x + qᵀ x
//!     subject to G x ≤ h
//!                A x = b
//! ```
//! `H` may be singular as long as it is positive definite on the null space of `A`;
//! the solver works with `H + μ AᵀA`, which has the same minimizer over `A x = b`.
//! Variables that share no Hessian entry or constraint row are split into
//! independent blocks and solved separately.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{debug_dump, SolveResult, SolveStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            g_ineq: DMatrix::zeros(0, n),
            h_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        let shape_ok = self.hessian.shape() == (n, n)
            && self.g_ineq.ncols() == n
            && self.g_ineq.nrows() == self.h_ineq.len()
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len();
        if !shape_ok {
            return Err(Error::DimensionMismatch(format!(
                "H {:?}, q {n}, G {:?}, h {}, A {:?}, b {}",
                self.hessian.shape(),
                self.g_ineq.shape(),
                self.h_ineq.len(),
                self.a_eq.shape(),
                self.b_eq.len()
            )));
        }
        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::DimensionMismatch(format!("H is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Primal feasibility tolerance used for row selection.
const FEAS_TOL: f64 = 1e-10;

pub fn solve_qp(problem: &QpProblem) -> Result<SolveResult> {
    problem.validate()?;
    debug_dump("qp", problem);
    let n = problem.num_vars();

    // Rows without any nonzero coefficient are either vacuous or infeasible.
    let zero_rows = |m: &DMatrix<f64>| {
        let mut zero = vec![true; m.nrows()];
        for col in m.column_iter() {
            for (z, v) in zero.iter_mut().zip(col.iter()) {
                *z &= *v == 0.0;
            }
        }
        zero
    };
    let infeasible_ineq = zero_rows(&problem.g_ineq).iter().zip(problem.h_ineq.iter()).any(|(z, h)| *z && *h < -FEAS_TOL);
    let infeasible_eq = zero_rows(&problem.a_eq).iter().zip(problem.b_eq.iter()).any(|(z, b)| *z && b.abs() > FEAS_TOL);
    if infeasible_ineq || infeasible_eq {
        return Ok(SolveResult::failed(SolveStatus::Infeasible, n, 0));
    }

    let blocks = independent_blocks(problem);
    if blocks.len() == 1 {
        return solve_block(problem);
    }

    let mut x = vec![0.0; n];
    let mut ineq_duals = vec![0.0; problem.h_ineq.len()];
    let mut eq_duals = vec![0.0; problem.b_eq.len()];
    let mut iterations = 0;
    let mut objective = 0.0;
    let mut status = SolveStatus::Optimal;
    for block in &blocks {
        let sub = block.extract(problem);
        let res = solve_block(&sub)?;
        iterations += res.iterations;
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Ok(SolveResult::failed(SolveStatus::Infeasible, n, iterations)),
            SolveStatus::MaxIter => status = SolveStatus::MaxIter,
        }
        objective += res.objective;
        for (k, &v) in block.vars.iter().enumerate() {
            x[v] = res.x[k];
        }
        for (k, &r) in block.ineq_rows.iter().enumerate() {
            ineq_duals[r] = res.ineq_duals[k];
        }
        for (k, &r) in block.eq_rows.iter().enumerate() {
            eq_duals[r] = res.eq_duals[k];
        }
    }
    if status != SolveStatus::Optimal {
        return Ok(SolveResult::failed(status, n, iterations));
    }
    Ok(SolveResult { status, x, objective, iterations, ineq_duals, eq_duals })
}

struct Block {
    vars: Vec<usize>,
    ineq_rows: Vec<usize>,
    eq_rows: Vec<usize>,
}

impl Block {
    fn extract(&self, p: &QpProblem) -> QpProblem {
        let nv = self.vars.len();
        QpProblem {
            hessian: DMatrix::from_fn(nv, nv, |a, b| p.hessian[(self.vars[a], self.vars[b])]),
            linear: DVector::from_fn(nv, |a, _| p.linear[self.vars[a]]),
            g_ineq: DMatrix::from_fn(self.ineq_rows.len(), nv, |r, a| p.g_ineq[(self.ineq_rows[r], self.vars[a])]),
            h_ineq: DVector::from_fn(self.ineq_rows.len(), |r, _| p.h_ineq[self.ineq_rows[r]]),
            a_eq: DMatrix::from_fn(self.eq_rows.len(), nv, |r, a| p.a_eq[(self.eq_rows[r], self.vars[a])]),
            b_eq: DVector::from_fn(self.eq_rows.len(), |r, _| p.b_eq[self.eq_rows[r]]),
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // smaller index becomes the root so block order is by lowest variable
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

fn independent_blocks(p: &QpProblem) -> Vec<Block> {
    let n = p.num_vars();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if p.hessian[(i, j)] != 0.0 {
                union(&mut parent, i, j);
            }
        }
    }
    // first nonzero column of every row; matrices are column-major, so scan by column
    let first_nonzero = |m: &DMatrix<f64>, parent: &mut Vec<usize>| -> Vec<Option<usize>> {
        let mut first = vec![None; m.nrows()];
        for (j, col) in m.column_iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                if *v != 0.0 {
                    match first[r] {
                        None => first[r] = Some(j),
                        Some(f) => union(parent, f, j),
                    }
                }
            }
        }
        first
    };
    let first_g = first_nonzero(&p.g_ineq, &mut parent);
    let first_a = first_nonzero(&p.a_eq, &mut parent);

    let mut roots: Vec<usize> = Vec::new();
    let mut block_of = vec![0usize; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        let idx = match roots.iter().position(|x| *x == r) {
            Some(i) => i,
            None => {
                roots.push(r);
                roots.len() - 1
            }
        };
        block_of[v] = idx;
    }
    let mut blocks: Vec<Block> =
        roots.iter().map(|_| Block { vars: Vec::new(), ineq_rows: Vec::new(), eq_rows: Vec::new() }).collect();
    for v in 0..n {
        blocks[block_of[v]].vars.push(v);
    }
    for (r, f) in first_g.iter().enumerate() {
        if let Some(j) = f {
            blocks[block_of[*j]].ineq_rows.push(r);
        }
    }
    for (r, f) in first_a.iter().enumerate() {
        if let Some(j) = f {
            blocks[block_of[*j]].eq_rows.push(r);
        }
    }
    blocks
}

/// Dual active-set iteration on one block.
fn solve_block(p: &QpProblem) -> Result<SolveResult> {
    let n = p.num_vars();
    let me = p.b_eq.len();
    let mi = p.h_ineq.len();
    if n == 0 {
        return Ok(SolveResult {
            status: SolveStatus::Optimal,
            x: Vec::new(),
            objective: 0.0,
            iterations: 0,
            ineq_duals: vec![0.0; mi],
            eq_duals: vec![0.0; me],
        });
    }

    // H + μ AᵀA and q − μ Aᵀ b
    let (hess, lin) = if me > 0 {
        let ata = p.a_eq.transpose() * &p.a_eq;
        let hmax = (0..n).map(|i| p.hessian[(i, i)]).fold(0.0_f64, f64::max);
        let amax = (0..n).map(|i| ata[(i, i)]).fold(0.0_f64, f64::max);
        let mu = if hmax > 0.0 && amax > 0.0 { hmax / amax } else { 1.0 };
        (&p.hessian + &ata * mu, &p.linear - p.a_eq.transpose() * &p.b_eq * mu)
    } else {
        (p.hessian.clone(), p.linear.clone())
    };
    let chol = hess.cholesky().ok_or(Error::NotStrictlyConvex)?;
    let lt = chol.l().transpose();
    let mut j = lt
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotStrictlyConvex)?;
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotStrictlyConvex);
    }
    // unconstrained minimizer x = −J Jᵀ q
    let mut x = -(&j * (j.transpose() * &lin));

    let row_norm_g: Vec<f64> = p.g_ineq.row_iter().map(|r| r.norm()).collect();
    let mut state = ActiveSet { r: DMatrix::zeros(n, n), active: Vec::new(), u: Vec::new() };
    let max_iter = 10 * (n + mi + me) + 100;
    let mut iterations = 0usize;

    // Constraint c: equalities 0..me as (a_c, b_c); inequalities me.. as (−g_i, −h_i), both nᵀx ≥ b.
    let normal = |c: usize| -> (DVector<f64>, f64) {
        if c < me {
            (p.a_eq.row(c).transpose(), p.b_eq[c])
        } else {
            (-p.g_ineq.row(c - me).transpose(), -p.h_ineq[c - me])
        }
    };

    for c in 0..me {
        let (mut nv, mut bc) = normal(c);
        let nrm = nv.norm();
        if nrm == 0.0 {
            continue;
        }
        if nv.dot(&x) - bc > 0.0 {
            nv = -nv;
            bc = -bc;
        }
        let sign = if nv.dot(&p.a_eq.row(c).transpose()) >= 0.0 { 1.0 } else { -1.0 };
        match add_with_steps(&mut state, &mut j, &mut x, c, sign, &nv, bc, me, &mut iterations, max_iter) {
            StepOutcome::Added | StepOutcome::Redundant => {}
            StepOutcome::Infeasible => return Ok(SolveResult::failed(SolveStatus::Infeasible, n, iterations)),
            StepOutcome::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, iterations)),
        }
    }

    loop {
        // most violated inequality, scaled by row norm; ties broken by lowest index
        let mut worst: Option<(usize, f64)> = None;
        if mi > 0 {
            let slack = &p.h_ineq - &p.g_ineq * &x;
            for i in 0..mi {
                if row_norm_g[i] == 0.0 || state.active.contains(&(me + i)) {
                    continue;
                }
                let tol = FEAS_TOL * (1.0 + p.h_ineq[i].abs() / row_norm_g[i]);
                let s = slack[i] / row_norm_g[i];
                if s < -tol && worst.map_or(true, |(_, w)| s < w) {
                    worst = Some((i, s));
                }
            }
        }
        let Some((i, _)) = worst else { break };
        let (nv, bc) = normal(me + i);
        match add_with_steps(&mut state, &mut j, &mut x, me + i, 1.0, &nv, bc, me, &mut iterations, max_iter) {
            StepOutcome::Added | StepOutcome::Redundant => {}
            StepOutcome::Infeasible => return Ok(SolveResult::failed(SolveStatus::Infeasible, n, iterations)),
            StepOutcome::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, iterations)),
        }
    }

    let mut ineq_duals = vec![0.0; mi];
    let mut eq_duals = vec![0.0; me];
    for (k, &c) in state.active.iter().enumerate() {
        let (cidx, sign) = decode(c);
        if cidx < me {
            eq_duals[cidx] = -sign * state.u[k];
        } else {
            ineq_duals[cidx - me] = state.u[k];
        }
    }
    let objective = p.objective(&x);
    Ok(SolveResult {
        status: SolveStatus::Optimal,
        x: x.iter().copied().collect(),
        objective,
        iterations,
        ineq_duals,
        eq_duals,
    })
}

struct ActiveSet {
    /// Upper-triangular factor; only the leading `active.len()` square block is used.
    r: DMatrix<f64>,
    /// Encoded constraint ids (see `encode`).
    active: Vec<usize>,
    u: Vec<f64>,
}

enum StepOutcome {
    Added,
    Redundant,
    Infeasible,
    MaxIter,
}

// Equality constraints may be added with a flipped normal; remember the sign in the id.
const FLIP: usize = 1 << (usize::BITS - 1);

fn encode(c: usize, sign: f64) -> usize {
    if sign < 0.0 {
        c | FLIP
    } else {
        c
    }
}

fn decode(id: usize) -> (usize, f64) {
    if id & FLIP != 0 {
        (id & !FLIP, -1.0)
    } else {
        (id, 1.0)
    }
}

#[allow(clippy::too_many_arguments)]
fn add_with_steps(
    st: &mut ActiveSet,
    j: &mut DMatrix<f64>,
    x: &mut DVector<f64>,
    c: usize,
    sign: f64,
    nv: &DVector<f64>,
    bc: f64,
    me: usize,
    iterations: &mut usize,
    max_iter: usize,
) -> StepOutcome {
    let n = x.len();
    let is_eq = c < me;
    let mut u_plus = 0.0;
    loop {
        *iterations += 1;
        if *iterations > max_iter {
            return StepOutcome::MaxIter;
        }
        let q = st.active.len();
        let d = j.transpose() * nv;
        let dsq = d.norm_squared();
        let d2sq: f64 = d.iter().skip(q).map(|v| v * v).sum();
        // r = R⁻¹ d₁
        let mut r = vec![0.0; q];
        for row in (0..q).rev() {
            let mut acc = d[row];
            for col in (row + 1)..q {
                acc -= st.r[(row, col)] * r[col];
            }
            r[row] = acc / st.r[(row, row)];
        }
        let mut t1 = f64::INFINITY;
        let mut drop = None;
        for (l, &id) in st.active.iter().enumerate() {
            let (cid, _) = decode(id);
            if cid >= me && r[l] > 0.0 {
                let ratio = st.u[l] / r[l];
                if ratio < t1 {
                    t1 = ratio;
                    drop = Some(l);
                }
            }
        }
        let s = nv.dot(x) - bc;
        let dependent = dsq == 0.0 || d2sq <= 1e-14 * dsq;
        let t2 = if dependent { f64::INFINITY } else { (-s / d2sq).max(0.0) };

        if dependent && is_eq && s.abs() <= FEAS_TOL * (1.0 + bc.abs()) {
            return StepOutcome::Redundant;
        }
        if t1.is_infinite() && t2.is_infinite() {
            return StepOutcome::Infeasible;
        }
        if t2.is_infinite() {
            for (l, ul) in st.u.iter_mut().enumerate() {
                *ul -= t1 * r[l];
            }
            u_plus += t1;
            drop_constraint(st, j, drop.expect("finite t1 has a drop index"));
            continue;
        }
        let t = t1.min(t2);
        // z = J₂ d₂
        for col in q..n {
            let coeff = t * d[col];
            if coeff != 0.0 {
                x.axpy(coeff, &j.column(col), 1.0);
            }
        }
        for (l, ul) in st.u.iter_mut().enumerate() {
            *ul -= t * r[l];
        }
        u_plus += t;
        if t2 <= t1 {
            add_constraint(st, j, d);
            st.active.push(encode(c, sign));
            st.u.push(u_plus);
            return StepOutcome::Added;
        }
        drop_constraint(st, j, drop.expect("finite t1 has a drop index"));
    }
}

/// Givens rotation `(c, s)` with `c·a + s·b = hypot(a, b)` and `−s·a + c·b = 0`.
fn givens(a: f64, b: f64) -> Option<(f64, f64, f64)> {
    if b == 0.0 {
        return None;
    }
    let rho = a.hypot(b);
    Some((a / rho, b / rho, rho))
}

fn rotate_columns(j: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let (ja, jb) = (j[(row, a)], j[(row, b)]);
        j[(row, a)] = c * ja + s * jb;
        j[(row, b)] = -s * ja + c * jb;
    }
}

fn add_constraint(st: &mut ActiveSet, j: &mut DMatrix<f64>, mut d: DVector<f64>) {
    let n = d.len();
    let q = st.active.len();
    for col in ((q + 1)..n).rev() {
        if let Some((c, s, rho)) = givens(d[col - 1], d[col]) {
            d[col - 1] = rho;
            d[col] = 0.0;
            rotate_columns(j, col - 1, col, c, s);
        }
    }
    for row in 0..=q {
        st.r[(row, q)] = d[row];
    }
}

fn drop_constraint(st: &mut ActiveSet, j: &mut DMatrix<f64>, l: usize) {
    let q = st.active.len();
    for col in l..q - 1 {
        for row in 0..q {
            st.r[(row, col)] = st.r[(row, col + 1)];
        }
    }
    for row in 0..q {
        st.r[(row, q - 1)] = 0.0;
    }
    for k in l..q.saturating_sub(1) {
        if let Some((c, s, _)) = givens(st.r[(k, k)], st.r[(k + 1, k)]) {
            for col in k..q - 1 {
                let (a, b) = (st.r[(k, col)], st.r[(k + 1, col)]);
                st.r[(k, col)] = c * a + s * b;
                st.r[(k + 1, col)] = -s * a + c * b;
            }
            st.r[(k + 1, k)] = 0.0;
            rotate_columns(j, k, k + 1, c, s);
        }
    }
    st.active.remove(l);
    st.u.remove(l);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unconstrained_identity() {
        let p = QpProblem::unconstrained(DMatrix::identity(4, 4), DVector::zeros(4));
        let r = solve_qp(&p).unwrap();
        assert!(r.is_optimal());
        assert!(r.x.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_equality() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3));
        p.a_eq = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        p.b_eq = DVector::from_vec(vec![1.0]);
        let r = solve_qp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[2], 0.0, epsilon = 1e-12);
        // stationarity: Hx + Aᵀν = 0 → ν = −2
        assert_abs_diff_eq!(r.eq_duals[0], -2.0, epsilon = 1e-10);
    }

    #[test]
    fn singular_hessian_with_equalities() {
        // minimize (x0 − x1)² subject to x0 = 1, x0 + x1 + x2 = 3 and x2 ≤ 0.5
        let h = DMatrix::from_row_slice(3, 3, &[2., -2., 0., -2., 2., 0., 0., 0., 0.]);
        let mut p = QpProblem::unconstrained(h, DVector::zeros(3));
        p.a_eq = DMatrix::from_row_slice(2, 3, &[1., 0., 0., 1., 1., 1.]);
        p.b_eq = DVector::from_vec(vec![1.0, 3.0]);
        p.g_ineq = DMatrix::from_row_slice(1, 3, &[0., 0., 1.]);
        p.h_ineq = DVector::from_vec(vec![0.5]);
        let r = solve_qp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.x[1], 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(r.x[2], 0.5, epsilon = 1e-10);
        assert!(r.ineq_duals[0] > 0.0);
    }

    #[test]
    fn infeasible_box() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.g_ineq = DMatrix::from_row_slice(2, 2, &[1., 0., -1., 0.]);
        p.h_ineq = DVector::from_vec(vec![-1.0, -1.0]); // x ≤ −1 and x ≥ 1
        assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(2, 2, &[1., 1., 2., 2.]);
        p.b_eq = DVector::from_vec(vec![1.0, 3.0]);
        assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);
        // consistent duplicates are fine
        p.b_eq = DVector::from_vec(vec![1.0, 2.0]);
        let r = solve_qp(&p).unwrap();
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_shapes_and_nonconvex() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(solve_qp(&p), Err(Error::DimensionMismatch(_))));
        let p = QpProblem::unconstrained(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(solve_qp(&p), Err(Error::NotStrictlyConvex)));
    }

    #[test]
    fn splits_independent_blocks() {
        // two decoupled 1-D problems: min (x−3)² s.t. x ≤ 1; min (y+2)² s.t. y ≥ 0
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-6.0, 4.0]));
        p.g_ineq = DMatrix::from_row_slice(2, 2, &[1., 0., 0., -1.]);
        p.h_ineq = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(independent_blocks(&p).len(), 2);
        let r = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ineq_duals[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.ineq_duals[1], 4.0, epsilon = 1e-10);
    }
}
