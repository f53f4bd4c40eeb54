//! Dense convex QP and LP solvers for problems with up to a few hundred variables.
//!
//! Both solvers are deterministic: identical inputs produce bit-identical outputs.

mod lp;
mod qp;

pub use lp::{solve_lp, solve_lp_lex, LpProblem};
pub use qp::{solve_qp, QpProblem};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers of the inequality rows (`≥ 0` at an optimum). Empty for LPs.
    #[serde(default)]
    pub ineq_duals: Vec<f64>,
    /// Multipliers of the equality rows. Empty for LPs.
    #[serde(default)]
    pub eq_duals: Vec<f64>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(crate) fn failed(status: SolveStatus, n: usize, iterations: usize) -> Self {
        Self { status, x: vec![0.0; n], objective: f64::NAN, iterations, ineq_duals: Vec::new(), eq_duals: Vec::new() }
    }
}

/// Writes a problem as pretty JSON when `SPLINETRAJ_DUMP_DIR` is set, for offline cross-checking.
pub fn debug_dump<T: Serialize>(name: &str, problem: &T) {
    let Ok(dir) = std::env::var("SPLINETRAJ_DUMP_DIR") else { return };
    let path = std::path::Path::new(&dir).join(format!("{name}.json"));
    if let Ok(text) = serde_json::to_string_pretty(problem) {
        let _ = std::fs::write(path, text);
    }
}
