//! Guidance gradient of the coupled objective `J = ½∫‖jerk‖² dt + ρ·1ᵀT`.
//!
//! The stacked gradient `[∇_Q J; ∇_T J]` is accumulated with momentum, normalized,
//! and split back into a spatial term `c·n_Q` and a temporal term `(c/ρ)·n_T`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bspline::{segment_energy_matrix, SplineTrajectory};
use crate::error::Result;

/// Finite-difference step for the span derivatives of the energy.
pub fn span_step(span: f64) -> f64 {
    (1e-6 * span).max(1e-7)
}

fn energy_with_spans(traj: &SplineTrajectory, spans: Vec<f64>) -> Result<f64> {
    let t = traj.with_spans(spans)?;
    let mut e = 0.0;
    for seg in 0..t.num_segments() {
        let w = segment_energy_matrix(&t, seg)?;
        e += crate::bspline::segment_energy(&t, seg, &w);
    }
    Ok(e)
}

/// `J(Q, T)` for the trajectory's current control points and spans.
pub fn objective(traj: &SplineTrajectory, rho: f64) -> Result<f64> {
    Ok(0.5 * energy_with_spans(traj, traj.spans().to_vec())? + rho * traj.duration())
}

/// Stacked gradient: axis-major `∇_Q J` (length `3(n+1)`) followed by `∇_T J` (length `m+1`).
pub fn objective_gradient(traj: &SplineTrajectory, rho: f64) -> Result<DVector<f64>> {
    let np = traj.control_points().len();
    let p = traj.degree();
    let m1 = traj.num_segments();
    let mut g = DVector::zeros(3 * np + m1);
    let q = traj.control_points();
    for seg in 0..m1 {
        let w = segment_energy_matrix(traj, seg)?.w * traj.spans()[seg];
        for axis in 0..3 {
            for a in 0..=p {
                let mut acc = 0.0;
                for b in 0..=p {
                    acc += w[(a, b)] * q[seg + b][axis];
                }
                g[axis * np + seg + a] += acc;
            }
        }
    }
    for i in 0..m1 {
        let h = span_step(traj.spans()[i]);
        let mut plus = traj.spans().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let de = (energy_with_spans(traj, plus)? - energy_with_spans(traj, minus)?) / (2.0 * h);
        g[3 * np + i] = 0.5 * de + rho;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceState {
    pub grad: DVector<f64>,
    pub norm_grad: DVector<f64>,
    /// Weight of the accumulated gradient in `grad ← γ_m·grad + grad_new`.
    pub momentum: f64,
    pub confidence: f64,
    /// Guidance is injected only when `ρ ≤ threshold`.
    pub threshold: f64,
}

impl GuidanceState {
    pub fn new(momentum: f64, confidence: f64, threshold: f64) -> Self {
        Self { grad: DVector::zeros(0), norm_grad: DVector::zeros(0), momentum, confidence, threshold }
    }

    pub fn active(&self, rho: f64) -> bool {
        rho <= self.threshold
    }

    /// Momentum accumulation followed by L2 normalization. A change of dimension
    /// (the trajectory was resized) restarts the accumulation.
    pub fn update(&mut self, grad_new: &DVector<f64>) {
        if self.grad.len() == grad_new.len() {
            self.grad = &self.grad * self.momentum + grad_new;
        } else {
            self.grad = grad_new.clone();
        }
        let norm = self.grad.norm();
        self.norm_grad = if norm > 0.0 && norm.is_finite() { &self.grad / norm } else { DVector::zeros(self.grad.len()) };
    }

    pub fn update_from(&mut self, traj: &SplineTrajectory, rho: f64) -> Result<()> {
        let g = objective_gradient(traj, rho)?;
        self.update(&g);
        Ok(())
    }

    /// `(c·n_Q, (c/ρ)·n_T)` with `n_Q` the first `3·num_points` entries.
    pub fn get(&self, rho: f64, num_points: usize) -> (DVector<f64>, DVector<f64>) {
        let split = 3 * num_points;
        let gq = self.norm_grad.rows(0, split) * self.confidence;
        let gt = self.norm_grad.rows(split, self.norm_grad.len() - split) * (self.confidence / rho);
        (gq.into_owned(), gt.into_owned())
    }
}
