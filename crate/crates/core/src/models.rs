//! The four estimators: joint fairness (JFM), single fairness (SFM),
//! group-separate lasso and group-ignorant lasso. All of them run on the
//! ASPG solver over pooled-standardized features.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{class_conditional_means, standardize, GroupedDesign, StandardizationParams};
use crate::error::{JfmError, Result};
use crate::metrics;
use crate::penalty::{build_shared_fairness_matrices, PenaltyOperator};
use crate::solver::{aspg_solve, augment, sigmoid, split_blocks, Convergence, LossBlock, Problem, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Jfm,
    Sfm,
    Separate,
    Ignorant,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Jfm, ModelKind::Sfm, ModelKind::Separate, ModelKind::Ignorant];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Jfm => "jfm",
            ModelKind::Sfm => "sfm",
            ModelKind::Separate => "separate",
            ModelKind::Ignorant => "ignorant",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = JfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jfm" => Ok(ModelKind::Jfm),
            "sfm" => Ok(ModelKind::Sfm),
            "separate" | "group-separate" | "group_separate" => Ok(ModelKind::Separate),
            "ignorant" | "group-ignorant" | "group_ignorant" => Ok(ModelKind::Ignorant),
            other => Err(JfmError::Config(format!(
                "unknown model {other:?} (expected jfm, sfm, separate or ignorant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub solver: SolverConfig,
    /// Standardize features with pooled statistics before fitting.
    pub standardize: bool,
    /// Fairness rows include the group intercepts.
    pub fairness_intercept: bool,
    /// The group-ignorant model penalizes its group dummies.
    pub penalize_dummies: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            standardize: true,
            fairness_intercept: true,
            penalize_dummies: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lambda_f: f64,
    pub lambda_sim: f64,
    pub lambda_sp: Vec<f64>,
}

/// A fitted model. Coefficients are on the standardized feature scale;
/// `predict` takes raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_kind: ModelKind,
    pub feature_names: Vec<String>,
    pub group_ids: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    /// Group-ignorant only: dummy coefficients for groups 2..K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dummy_coefficients: Option<Vec<f64>>,
    pub hyperparameters: Hyperparameters,
    pub standardization: StandardizationParams,
    pub convergence: Convergence,
    /// Per-group AUC on the training data (absent when a group has one class).
    pub training_auc: Vec<Option<f64>>,
}

impl FitResult {
    pub fn group_index(&self, group_id: &str) -> Result<usize> {
        self.group_ids.iter().position(|g| g == group_id).ok_or_else(|| {
            JfmError::Precondition(format!(
                "unknown group {group_id:?}; known groups: {}",
                self.group_ids.join(", ")
            ))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn prepare(design: &GroupedDesign, opts: &FitOptions) -> Result<(GroupedDesign, StandardizationParams)> {
    opts.solver.validate()?;
    if opts.standardize {
        standardize(design)
    } else {
        Ok((design.clone(), StandardizationParams::identity(design.n_features())))
    }
}

fn require_groups(design: &GroupedDesign, kind: ModelKind) -> Result<()> {
    if design.n_groups() < 2 {
        let hint = if kind == ModelKind::Jfm { "; use the group-separate model" } else { "" };
        return Err(JfmError::Model(format!(
            "{kind} needs at least two groups, got {}{hint}",
            design.n_groups()
        )));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(JfmError::Domain(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

fn finish(mut fit: FitResult, design: &GroupedDesign) -> Result<FitResult> {
    fit.training_auc = design
        .groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let probs = predict_index(&fit, &g.x, k)?;
            Ok(metrics::auc(probs.as_slice().expect("contiguous"), g.y.as_slice().expect("contiguous")).ok())
        })
        .collect::<Result<_>>()?;
    Ok(fit)
}

/// Joint fairness model: group-specific coefficients under fairness,
/// fusion and per-group sparsity penalties.
pub fn fit_jfm(
    design: &GroupedDesign,
    lambda_f: f64,
    lambda_sim: f64,
    lambda_sp: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    require_groups(design, ModelKind::Jfm)?;
    check_nonneg("lambda_f", lambda_f)?;
    check_nonneg("lambda_sim", lambda_sim)?;
    let (std_design, params) = prepare(design, opts)?;
    let problem = Problem::joint(&std_design, lambda_f, lambda_sim, lambda_sp, opts.fairness_intercept)?;
    let sol = aspg_solve(&problem, &opts.solver)?;
    let blocks = split_blocks(&sol.beta, design.n_groups(), design.n_features());
    let fit = FitResult {
        model_kind: ModelKind::Jfm,
        feature_names: design.feature_names().to_vec(),
        group_ids: design.group_ids(),
        coefficients: blocks.iter().map(|(c, _)| c.to_vec()).collect(),
        intercepts: blocks.iter().map(|(_, b)| *b).collect(),
        dummy_coefficients: None,
        hyperparameters: Hyperparameters { lambda_f, lambda_sim, lambda_sp: lambda_sp.to_vec() },
        standardization: params,
        convergence: sol.convergence,
        training_auc: Vec::new(),
    };
    finish(fit, design)
}

/// Single fairness model: one shared coefficient vector, unweighted pooled
/// likelihood, fairness rows `X̄_{jy} − X̄_{ky}`.
pub fn fit_sfm(design: &GroupedDesign, lambda_f: f64, lambda_sp: f64, opts: &FitOptions) -> Result<FitResult> {
    require_groups(design, ModelKind::Sfm)?;
    check_nonneg("lambda_f", lambda_f)?;
    check_nonneg("lambda_sp", lambda_sp)?;
    let (std_design, params) = prepare(design, opts)?;
    let p = design.n_features();
    let w = p + 1;
    let operator = if lambda_f > 0.0 {
        std_design.require_both_classes()?;
        let means = class_conditional_means(&std_design, false)?
            .augmented(if opts.fairness_intercept { 1.0 } else { 0.0 });
        let (d0, d1) = build_shared_fairness_matrices(&means)?;
        PenaltyOperator::fairness_only(d0, d1, lambda_f)?
    } else {
        PenaltyOperator::zero(w)
    };
    let blocks = std_design
        .groups()
        .iter()
        .map(|g| LossBlock { x: augment(&g.x), y: g.y.clone(), weight: 1.0, offset: 0 })
        .collect();
    let mut l1 = Array1::from_elem(w, lambda_sp);
    l1[p] = 0.0;
    let problem = Problem::new(blocks, operator, l1)?;
    let sol = aspg_solve(&problem, &opts.solver)?;
    let k = design.n_groups();
    let slopes = sol.beta.slice(s![..p]).to_vec();
    let fit = FitResult {
        model_kind: ModelKind::Sfm,
        feature_names: design.feature_names().to_vec(),
        group_ids: design.group_ids(),
        coefficients: vec![slopes; k],
        intercepts: vec![sol.beta[p]; k],
        dummy_coefficients: None,
        hyperparameters: Hyperparameters { lambda_f, lambda_sim: 0.0, lambda_sp: vec![lambda_sp; k] },
        standardization: params,
        convergence: sol.convergence,
        training_auc: Vec::new(),
    };
    finish(fit, design)
}

/// K independent lasso-logistic fits, one per group.
pub fn fit_group_separate(design: &GroupedDesign, lambda_sp: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let k = design.n_groups();
    if lambda_sp.len() != k {
        return Err(JfmError::Precondition(format!("expected {k} sparsity parameters, got {}", lambda_sp.len())));
    }
    let (std_design, params) = prepare(design, opts)?;
    let p = design.n_features();
    let mut coefficients = Vec::with_capacity(k);
    let mut intercepts = Vec::with_capacity(k);
    let mut conv = Convergence {
        iterations: 0,
        final_change: 0.0,
        objective_exact: 0.0,
        objective_smoothed: 0.0,
        converged: true,
    };
    for g in 0..k {
        let single = std_design.subset_groups(&[g])?;
        let problem = Problem::joint(&single, 0.0, 0.0, &[lambda_sp[g]], false)?;
        let sol = aspg_solve(&problem, &opts.solver)?;
        coefficients.push(sol.beta.slice(s![..p]).to_vec());
        intercepts.push(sol.beta[p]);
        conv.iterations = conv.iterations.max(sol.convergence.iterations);
        conv.final_change = conv.final_change.max(sol.convergence.final_change);
        conv.objective_exact += sol.convergence.objective_exact;
        conv.objective_smoothed += sol.convergence.objective_smoothed;
        conv.converged &= sol.convergence.converged;
    }
    let fit = FitResult {
        model_kind: ModelKind::Separate,
        feature_names: design.feature_names().to_vec(),
        group_ids: design.group_ids(),
        coefficients,
        intercepts,
        dummy_coefficients: None,
        hyperparameters: Hyperparameters { lambda_f: 0.0, lambda_sim: 0.0, lambda_sp: lambda_sp.to_vec() },
        standardization: params,
        convergence: conv,
        training_auc: Vec::new(),
    };
    finish(fit, design)
}

/// Pooled lasso-logistic with K−1 group indicator columns (reference: the
/// first group) and the mean log-likelihood.
pub fn fit_group_ignorant(design: &GroupedDesign, lambda_sp: f64, opts: &FitOptions) -> Result<FitResult> {
    require_groups(design, ModelKind::Ignorant)?;
    check_nonneg("lambda_sp", lambda_sp)?;
    let (std_design, params) = prepare(design, opts)?;
    let k = design.n_groups();
    let p = design.n_features();
    let (x, y, membership) = std_design.pooled();
    let n = x.nrows();
    let width = p + (k - 1) + 1;
    let mut xa = Array2::zeros((n, width));
    xa.slice_mut(s![.., ..p]).assign(&x);
    for (i, &g) in membership.iter().enumerate() {
        if g > 0 {
            xa[[i, p + g - 1]] = 1.0;
        }
        xa[[i, width - 1]] = 1.0;
    }
    let mut l1 = Array1::zeros(width);
    l1.slice_mut(s![..p]).fill(lambda_sp);
    if opts.penalize_dummies {
        l1.slice_mut(s![p..p + k - 1]).fill(lambda_sp);
    }
    let block = LossBlock { x: xa, y, weight: 1.0 / n as f64, offset: 0 };
    let problem = Problem::new(vec![block], PenaltyOperator::zero(width), l1)?;
    let sol = aspg_solve(&problem, &opts.solver)?;
    let slopes = sol.beta.slice(s![..p]).to_vec();
    let dummies = sol.beta.slice(s![p..p + k - 1]).to_vec();
    let base = sol.beta[width - 1];
    let intercepts = (0..k).map(|g| if g == 0 { base } else { base + dummies[g - 1] }).collect();
    let fit = FitResult {
        model_kind: ModelKind::Ignorant,
        feature_names: design.feature_names().to_vec(),
        group_ids: design.group_ids(),
        coefficients: vec![slopes; k],
        intercepts,
        dummy_coefficients: Some(dummies),
        hyperparameters: Hyperparameters { lambda_f: 0.0, lambda_sim: 0.0, lambda_sp: vec![lambda_sp; k] },
        standardization: params,
        convergence: sol.convergence,
        training_auc: Vec::new(),
    };
    finish(fit, design)
}

/// Fits `kind` with the hyperparameters that apply to it.
pub fn fit_model(
    kind: ModelKind,
    design: &GroupedDesign,
    lambda_f: f64,
    lambda_sim: f64,
    lambda_sp: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let scalar = |v: &[f64]| -> Result<f64> {
        v.first().copied().ok_or_else(|| JfmError::Precondition("missing lambda_sp".into()))
    };
    let per_group = |v: &[f64]| -> Vec<f64> {
        if v.len() == 1 {
            vec![v[0]; design.n_groups()]
        } else {
            v.to_vec()
        }
    };
    match kind {
        ModelKind::Jfm => fit_jfm(design, lambda_f, lambda_sim, &per_group(lambda_sp), opts),
        ModelKind::Sfm => fit_sfm(design, lambda_f, scalar(lambda_sp)?, opts),
        ModelKind::Separate => fit_group_separate(design, &per_group(lambda_sp), opts),
        ModelKind::Ignorant => fit_group_ignorant(design, scalar(lambda_sp)?, opts),
    }
}

fn predict_index(fit: &FitResult, x: &Array2<f64>, k: usize) -> Result<Array1<f64>> {
    let xs = fit.standardization.apply_matrix(x)?;
    let beta = Array1::from(fit.coefficients[k].clone());
    let eta = xs.dot(&beta) + fit.intercepts[k];
    Ok(eta.mapv(sigmoid))
}

/// Predicted probabilities for raw feature rows of group `group_id`.
pub fn predict(fit: &FitResult, x: &Array2<f64>, group_id: &str) -> Result<Array1<f64>> {
    let k = fit.group_index(group_id)?;
    if x.ncols() != fit.feature_names.len() {
        return Err(JfmError::Precondition(format!(
            "expected {} feature columns, got {}",
            fit.feature_names.len(),
            x.ncols()
        )));
    }
    predict_index(fit, x, k)
}

/// Predictions for every group of `design`, matched to the fit by group id.
pub fn predict_design(fit: &FitResult, design: &GroupedDesign) -> Result<Vec<Array1<f64>>> {
    design.groups().iter().map(|g| predict(fit, &g.x, &g.id)).collect()
}
