//! Accelerated smoothing proximal gradient (ASPG) solver.
//!
//! Minimizes
//!
//! ```text
//! Σ_b w_b Σ_i [log(1 + exp(x_i β_b)) − y_i x_i β_b] + f_μ(β) + Σ_j t_j |β_j|
//! ```
//!
//! where `f_μ` is the smoothed `‖Dβ‖₁` and `t_j` are per-coordinate L1
//! weights (zero on intercepts). Each iteration takes a gradient step of
//! length `1/L` on the smooth part at the momentum point, soft-thresholds,
//! and updates the FISTA momentum.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{class_conditional_means, GroupedDesign};
use crate::error::{JfmError, Result};
use crate::linalg;
use crate::penalty::PenaltyOperator;
use crate::smoothing::{default_mu, SmoothingContext};

/// Default optimality tolerance confirming an iterate-change stop.
pub const DEFAULT_KKT_TOL: f64 = 1e-4;

/// How the loss part of the Lipschitz constant is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    /// `¼ max_k λmax(X_kᵀX_k)`, ignoring loss weights.
    #[default]
    Unweighted,
    /// `¼ max_k λmax(Σ w X_kᵀX_k)`, using the loss weights.
    Tight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Smoothing parameter; `None` means `1e-4 / m`.
    pub mu: Option<f64>,
    /// Stop when the L2 change of successive iterates is at most this.
    pub epsilon: f64,
    pub max_iter: usize,
    pub lipschitz: LipschitzMode,
    /// Gradient-based adaptive momentum restart.
    pub restart: bool,
    /// When the iterate change first drops to `epsilon`, also require the
    /// optimality residual to be at most this before stopping. `None` stops
    /// on the iterate change alone.
    pub kkt_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: None,
            epsilon: 1e-6,
            max_iter: 10_000,
            lipschitz: LipschitzMode::Unweighted,
            restart: false,
            kkt_tol: Some(DEFAULT_KKT_TOL),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(JfmError::Domain(format!("mu must be positive, got {mu}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(JfmError::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(tol) = self.kkt_tol {
            if !(tol > 0.0) {
                return Err(JfmError::Domain(format!("kkt_tol must be positive, got {tol}")));
            }
        }
        if self.max_iter == 0 {
            return Err(JfmError::Domain("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_mu(&self, rows: usize) -> f64 {
        self.mu.unwrap_or_else(|| default_mu(rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub final_change: f64,
    pub objective_exact: f64,
    pub objective_smoothed: f64,
    pub converged: bool,
}

/// A logistic loss term on the coefficient slice `offset..offset + x.ncols()`.
#[derive(Debug, Clone)]
pub struct LossBlock {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub weight: f64,
    pub offset: usize,
}

/// Appends a column of ones.
pub fn augment(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    out
}

/// A composite problem: logistic loss blocks, a penalty operator, and L1
/// weights per coordinate.
#[derive(Debug, Clone)]
pub struct Problem {
    blocks: Vec<LossBlock>,
    operator: PenaltyOperator,
    l1_weights: Array1<f64>,
}

impl Problem {
    pub fn new(blocks: Vec<LossBlock>, operator: PenaltyOperator, l1_weights: Array1<f64>) -> Result<Self> {
        let dim = operator.cols();
        if l1_weights.len() != dim {
            return Err(JfmError::Structural(format!(
                "{} L1 weights for {dim} coefficients",
                l1_weights.len()
            )));
        }
        if let Some(t) = l1_weights.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return Err(JfmError::Domain(format!("L1 weight must be nonnegative, got {t}")));
        }
        for b in &blocks {
            if b.offset + b.x.ncols() > dim || b.x.nrows() != b.y.len() {
                return Err(JfmError::Structural("loss block does not fit the coefficient layout".into()));
            }
            if !(b.weight >= 0.0) {
                return Err(JfmError::Domain(format!("loss weight must be nonnegative, got {}", b.weight)));
            }
        }
        Ok(Self { blocks, operator, l1_weights })
    }

    /// The joint fairness problem: one block of `p` slopes plus an intercept
    /// per group, loss weights `1/n_k`.
    ///
    /// With `fairness_intercept`, fairness rows act on the intercepts too.
    pub fn joint(
        design: &GroupedDesign,
        lambda_f: f64,
        lambda_sim: f64,
        lambda_sp: &[f64],
        fairness_intercept: bool,
    ) -> Result<Self> {
        let k = design.n_groups();
        let p = design.n_features();
        let w = p + 1;
        if lambda_sp.len() != k {
            return Err(JfmError::Precondition(format!(
                "expected {k} sparsity parameters, got {}",
                lambda_sp.len()
            )));
        }
        let operator = if k >= 2 {
            if lambda_f > 0.0 {
                design.require_both_classes()?;
                let means = class_conditional_means(design, false)?
                    .augmented(if fairness_intercept { 1.0 } else { 0.0 });
                PenaltyOperator::joint(&means, p, lambda_f, lambda_sim)?
            } else if lambda_f == 0.0 {
                PenaltyOperator::fusion_only(k, p, w, lambda_sim)?
            } else {
                return Err(JfmError::Domain(format!("lambda_f must be nonnegative, got {lambda_f}")));
            }
        } else if lambda_f == 0.0 && lambda_sim == 0.0 {
            PenaltyOperator::zero(w)
        } else {
            return Err(JfmError::Structural(
                "fairness and fusion penalties need at least two groups".into(),
            ));
        };
        let blocks = design
            .groups()
            .iter()
            .enumerate()
            .map(|(g, data)| LossBlock {
                x: augment(&data.x),
                y: data.y.clone(),
                weight: 1.0 / data.n() as f64,
                offset: g * w,
            })
            .collect();
        Self::new(blocks, operator, block_l1_weights(p, lambda_sp)?)
    }

    pub fn dim(&self) -> usize {
        self.operator.cols()
    }

    pub fn operator(&self) -> &PenaltyOperator {
        &self.operator
    }

    pub fn blocks(&self) -> &[LossBlock] {
        &self.blocks
    }

    pub fn l1_weights(&self) -> &Array1<f64> {
        &self.l1_weights
    }

    /// Weighted negative log-likelihood and its gradient.
    pub fn loss_and_gradient(&self, beta: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        let mut grad = Array1::zeros(self.dim());
        let mut value = 0.0;
        for b in &self.blocks {
            let coef = beta.slice(s![b.offset..b.offset + b.x.ncols()]);
            let eta = b.x.dot(&coef);
            let mut resid = Array1::zeros(eta.len());
            let mut v = 0.0;
            for ((r, &e), &y) in resid.iter_mut().zip(eta.iter()).zip(b.y.iter()) {
                v += nll(e, y);
                *r = if y == 1.0 { -sigmoid(-e) } else { sigmoid(e) - y };
            }
            value += b.weight * v;
            let g = b.x.t().dot(&resid);
            grad.slice_mut(s![b.offset..b.offset + b.x.ncols()]).scaled_add(b.weight, &g);
        }
        (value, grad)
    }

    pub fn loss(&self, beta: ArrayView1<'_, f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let eta = b.x.dot(&beta.slice(s![b.offset..b.offset + b.x.ncols()]));
                b.weight * eta.iter().zip(b.y.iter()).map(|(&e, &y)| nll(e, y)).sum::<f64>()
            })
            .sum()
    }

    fn l1_penalty(&self, beta: ArrayView1<'_, f64>) -> f64 {
        beta.iter().zip(self.l1_weights.iter()).map(|(b, t)| t * b.abs()).sum()
    }

    /// Curvature bound of the loss: ¼ of the largest λmax over coefficient
    /// slices, with blocks sharing a slice summed.
    pub fn loss_lipschitz(&self, mode: LipschitzMode) -> f64 {
        let mut slices: Vec<(usize, usize)> = self.blocks.iter().map(|b| (b.offset, b.x.ncols())).collect();
        slices.sort_unstable();
        slices.dedup();
        let mut best: f64 = 0.0;
        for (offset, width) in slices {
            let members: Vec<&LossBlock> =
                self.blocks.iter().filter(|b| b.offset == offset && b.x.ncols() == width).collect();
            let lam = if members.len() == 1 {
                let b = members[0];
                let scale = match mode {
                    LipschitzMode::Unweighted => 1.0,
                    LipschitzMode::Tight => b.weight,
                };
                scale * linalg::gram_lambda_max(b.x.view())
            } else {
                let mut gram = Array2::<f64>::zeros((width, width));
                for b in members {
                    let scale = match mode {
                        LipschitzMode::Unweighted => 1.0,
                        LipschitzMode::Tight => b.weight,
                    };
                    gram.scaled_add(scale, &b.x.t().dot(&b.x));
                }
                linalg::gram_top_eigenvalue(width, |v| gram.dot(v))
            };
            best = best.max(lam);
        }
        0.25 * best
    }

    /// `L = loss bound + ‖D‖₂² / μ`.
    pub fn lipschitz(&self, mu: f64, mode: LipschitzMode) -> f64 {
        let norm = self.operator.spectral_norm();
        self.loss_lipschitz(mode) + norm * norm / mu
    }

    /// (exact objective, smoothed objective) at `beta`.
    pub fn objective(&self, beta: ArrayView1<'_, f64>, mu: f64) -> Result<(f64, f64)> {
        let ctx = SmoothingContext::new(&self.operator, mu)?;
        let loss = self.loss(beta);
        let l1 = self.l1_penalty(beta);
        let image = self.operator.apply(beta);
        let exact_pen: f64 = image.iter().map(|v| v.abs()).sum();
        let smooth_pen = ctx.value_from_image(&image);
        Ok((loss + exact_pen + l1, loss + smooth_pen + l1))
    }

    /// Largest violation of the optimality conditions of the smoothed
    /// problem at `beta`.
    pub fn kkt_residual(&self, beta: ArrayView1<'_, f64>, mu: f64) -> Result<f64> {
        let ctx = SmoothingContext::new(&self.operator, mu)?;
        let (_, mut grad) = self.loss_and_gradient(beta);
        grad += &ctx.gradient(beta);
        Ok(grad
            .iter()
            .zip(beta.iter())
            .zip(self.l1_weights.iter())
            .map(|((&g, &b), &t)| {
                if b != 0.0 {
                    (g + t * b.signum()).abs()
                } else {
                    (g.abs() - t).max(0.0)
                }
            })
            .fold(0.0, f64::max))
    }
}

/// Per-coordinate L1 weights for K blocks of `p` slopes + intercept.
pub fn block_l1_weights(p: usize, lambda_sp: &[f64]) -> Result<Array1<f64>> {
    let w = p + 1;
    let mut out = Array1::zeros(w * lambda_sp.len());
    for (k, &lam) in lambda_sp.iter().enumerate() {
        if !(lam >= 0.0) || !lam.is_finite() {
            return Err(JfmError::Domain(format!("lambda_sp must be nonnegative, got {lam}")));
        }
        out.slice_mut(s![k * w..k * w + p]).fill(lam);
    }
    Ok(out)
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 + e^η) − yη`, written as `softplus(−η)` for y = 1 to avoid cancellation.
#[inline]
fn nll(eta: f64, y: f64) -> f64 {
    if y == 1.0 {
        softplus(-eta)
    } else {
        softplus(eta) - y * eta
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sign(v)·max(|v| − t, 0)` with a shared threshold.
pub fn soft_threshold_scalar(v: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(JfmError::Domain(format!("threshold must be nonnegative, got {t}")));
    }
    Ok(shrink(v, t))
}

/// Elementwise soft-threshold with per-coordinate thresholds.
pub fn soft_threshold(v: &Array1<f64>, t: &Array1<f64>) -> Result<Array1<f64>> {
    if v.len() != t.len() {
        return Err(JfmError::Structural("threshold length mismatch".into()));
    }
    if let Some(bad) = t.iter().find(|x| !(**x >= 0.0)) {
        return Err(JfmError::Domain(format!("threshold must be nonnegative, got {bad}")));
    }
    Ok(ndarray::Zip::from(v).and(t).map_collect(|&a, &b| shrink(a, b)))
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// The FISTA iterate triple plus counters.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub beta: Array1<f64>,
    pub gamma: Array1<f64>,
    pub s: f64,
    pub t: usize,
    pub lipschitz: f64,
    pub last_change: f64,
}

impl SolverState {
    pub fn new(dim: usize, lipschitz: f64) -> Self {
        Self {
            beta: Array1::zeros(dim),
            gamma: Array1::zeros(dim),
            s: 1.0,
            t: 0,
            lipschitz,
            last_change: f64::INFINITY,
        }
    }

    /// One ASPG iteration. Returns `true` when the iterate change fell to
    /// `epsilon`.
    pub fn step(
        &mut self,
        problem: &Problem,
        smoothing: &SmoothingContext<'_>,
        epsilon: f64,
        restart: bool,
    ) -> Result<bool> {
        self.t += 1;
        let (loss, mut grad) = problem.loss_and_gradient(self.gamma.view());
        if !loss.is_finite() {
            return Err(JfmError::Numerical {
                iteration: self.t,
                message: format!("loss evaluated to {loss}"),
            });
        }
        let (_, smooth_grad) = smoothing.value_and_gradient(self.gamma.view());
        grad += &smooth_grad;

        let inv_l = 1.0 / self.lipschitz;
        let mut next = self.gamma.clone();
        next.scaled_add(-inv_l, &grad);
        ndarray::Zip::from(&mut next)
            .and(problem.l1_weights())
            .for_each(|v, &t| *v = shrink(*v, t * inv_l));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(JfmError::Numerical {
                iteration: self.t,
                message: "non-finite coefficient after proximal step".into(),
            });
        }

        let diff = &next - &self.beta;
        let change = diff.dot(&diff).sqrt();
        self.last_change = change;

        let s_next = (1.0 + (1.0 + 4.0 * self.s * self.s).sqrt()) / 2.0;
        let restart_now = restart && {
            let toward: Array1<f64> = &self.gamma - &next;
            toward.dot(&diff) > 0.0
        };
        if restart_now {
            self.s = 1.0;
            self.gamma = next.clone();
        } else {
            let momentum = (self.s - 1.0) / s_next;
            let mut gamma = next.clone();
            gamma.scaled_add(momentum, &diff);
            self.gamma = gamma;
            self.s = s_next;
        }
        self.beta = next;
        Ok(change <= epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: Array1<f64>,
    pub convergence: Convergence,
    pub lipschitz: f64,
    pub mu: f64,
}

/// Runs ASPG from β = γ = 0, s = 1.
///
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `converged = false`.
pub fn aspg_solve(problem: &Problem, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let mu = config.resolve_mu(problem.operator().rows());
    let smoothing = SmoothingContext::new(problem.operator(), mu)?;
    let mut lipschitz = problem.lipschitz(mu, config.lipschitz);
    if !(lipschitz > 0.0) {
        // all-zero data and no penalty rows: any step is exact
        lipschitz = 1.0;
    }
    let mut state = SolverState::new(problem.dim(), lipschitz);
    let mut converged = false;
    while state.t < config.max_iter {
        if state.step(problem, &smoothing, config.epsilon, config.restart)? {
            let confirmed = match config.kkt_tol {
                None => true,
                Some(tol) => problem.kkt_residual(state.beta.view(), mu)? <= tol,
            };
            if confirmed {
                converged = true;
                break;
            }
        }
    }
    let (exact, smoothed) = problem.objective(state.beta.view(), mu)?;
    if !exact.is_finite() {
        return Err(JfmError::Numerical { iteration: state.t, message: "objective is not finite".into() });
    }
    Ok(Solution {
        convergence: Convergence {
            iterations: state.t,
            final_change: state.last_change,
            objective_exact: exact,
            objective_smoothed: smoothed,
            converged,
        },
        beta: state.beta,
        lipschitz,
        mu,
    })
}

/// Weighted loss and gradient of the joint problem on `design`, with β laid
/// out as K blocks of (p slopes, intercept).
pub fn weighted_loss_grad(design: &GroupedDesign, beta: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
    let problem = Problem::joint(design, 0.0, 0.0, &vec![0.0; design.n_groups()], false)?;
    if beta.len() != problem.dim() {
        return Err(JfmError::Structural(format!(
            "beta has {} entries, expected {}",
            beta.len(),
            problem.dim()
        )));
    }
    Ok(problem.loss_and_gradient(beta))
}

/// `¼ max_k λmax(X_kᵀX_k) + ‖D‖₂²/μ` on the design's matrices as given.
pub fn lipschitz_constant(design: &GroupedDesign, operator: &PenaltyOperator, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(JfmError::Domain(format!("mu must be positive, got {mu}")));
    }
    let loss = design
        .groups()
        .iter()
        .map(|g| linalg::gram_lambda_max(g.x.view()))
        .fold(0.0, f64::max);
    let norm = operator.spectral_norm();
    Ok(0.25 * loss + norm * norm / mu)
}

/// Splits a joint coefficient vector into per-group (slopes, intercept).
pub fn split_blocks(beta: &Array1<f64>, groups: usize, p: usize) -> Vec<(Array1<f64>, f64)> {
    let w = p + 1;
    (0..groups)
        .map(|k| (beta.slice(s![k * w..k * w + p]).to_owned(), beta[k * w + p]))
        .collect()
}
