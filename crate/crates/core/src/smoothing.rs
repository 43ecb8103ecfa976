//! Nesterov smoothing of `‖Dβ‖₁`.
//!
//! `f_μ(β) = sup { αᵀDβ − (μ/2)‖α‖² : ‖α‖∞ ≤ 1 }`. The maximizer is the
//! clamp of `Dβ/μ` onto the unit box, which makes `f_μ` a coordinate-wise
//! Huber function of `Dβ` with gradient `Dᵀα*`.

use ndarray::{Array1, ArrayView1};

use crate::error::{JfmError, Result};
use crate::penalty::PenaltyOperator;

/// Default target for the smoothing gap `‖Dβ‖₁ − f_μ`, before halving.
pub const DEFAULT_SMOOTHING_TARGET: f64 = 1e-4;

/// μ = target / m, so the gap stays below target/2.
pub fn default_mu(rows: usize) -> f64 {
    DEFAULT_SMOOTHING_TARGET / rows.max(1) as f64
}

/// Coordinate-wise clamp onto `[-1, 1]`.
pub fn project_linf(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(clamp_unit)
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    if x > 1.0 {
        1.0
    } else if x < -1.0 {
        -1.0
    } else {
        x
    }
}

#[inline]
fn huber(d: f64, mu: f64) -> f64 {
    let a = d.abs();
    if a <= mu {
        d * d / (2.0 * mu)
    } else {
        a - mu / 2.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SmoothingContext<'a> {
    mu: f64,
    operator: &'a PenaltyOperator,
}

impl<'a> SmoothingContext<'a> {
    pub fn new(operator: &'a PenaltyOperator, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(JfmError::Domain(format!("smoothing parameter must be positive, got {mu}")));
        }
        Ok(Self { mu, operator })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn operator(&self) -> &'a PenaltyOperator {
        self.operator
    }

    pub fn m(&self) -> usize {
        self.operator.rows()
    }

    /// Upper bound μ·m/2 on `‖Dβ‖₁ − f_μ(β)`.
    pub fn gap_bound(&self) -> f64 {
        self.mu * self.m() as f64 / 2.0
    }

    /// f_μ(β) via the Huber form.
    pub fn value(&self, beta: ArrayView1<'_, f64>) -> f64 {
        self.value_from_image(&self.operator.apply(beta))
    }

    /// f_μ given `Dβ` already computed.
    pub fn value_from_image(&self, d_beta: &Array1<f64>) -> f64 {
        d_beta.iter().map(|&d| huber(d, self.mu)).sum()
    }

    /// f_μ(β) via the dual form `α*ᵀDβ − (μ/2)‖α*‖²`.
    pub fn value_dual(&self, beta: ArrayView1<'_, f64>) -> f64 {
        let d_beta = self.operator.apply(beta);
        let alpha = self.maximizer_from_image(&d_beta);
        alpha.dot(&d_beta) - 0.5 * self.mu * alpha.dot(&alpha)
    }

    /// α* = clamp(Dβ/μ).
    pub fn maximizer(&self, beta: ArrayView1<'_, f64>) -> Array1<f64> {
        self.maximizer_from_image(&self.operator.apply(beta))
    }

    fn maximizer_from_image(&self, d_beta: &Array1<f64>) -> Array1<f64> {
        let inv = 1.0 / self.mu;
        d_beta.mapv(|d| clamp_unit(d * inv))
    }

    /// ∇f_μ(β) = Dᵀα*.
    pub fn gradient(&self, beta: ArrayView1<'_, f64>) -> Array1<f64> {
        self.value_and_gradient(beta).1
    }

    /// Both at once, sharing the single `Dβ` product.
    pub fn value_and_gradient(&self, beta: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        if self.m() == 0 {
            return (0.0, Array1::zeros(self.operator.cols()));
        }
        let d_beta = self.operator.apply(beta);
        let value = self.value_from_image(&d_beta);
        let alpha = self.maximizer_from_image(&d_beta);
        (value, self.operator.apply_t(&alpha))
    }
}
