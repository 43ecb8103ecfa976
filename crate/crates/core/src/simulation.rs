//! Simulation scenarios (shared-fraction, minority-size and dimensionality
//! sweeps) and the replicate runner.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupData, GroupedDesign};
use crate::error::{JfmError, Result};
use crate::metrics::{evaluate, summarize_reports, MetricReport, SummaryRow};
use crate::models::{fit_model, FitOptions, ModelKind};
use crate::solver::sigmoid;
use crate::tuning::{grid_search, CVConfig, HyperGrid};

/// Sample size used to calibrate intercepts to a marginal prevalence.
const MARGINAL_CALIBRATION_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SharedFractionSweep,
    MinoritySizeSweep,
    DimensionalitySweep,
}

impl Scenario {
    pub fn number(&self) -> u8 {
        match self {
            Scenario::SharedFractionSweep => 1,
            Scenario::MinoritySizeSweep => 2,
            Scenario::DimensionalitySweep => 3,
        }
    }

    /// Values swept by default: shared fraction, minority size or p.
    pub fn default_sweep(&self) -> Vec<f64> {
        match self {
            Scenario::SharedFractionSweep => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            Scenario::MinoritySizeSweep => vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
            // p = 50 cannot hold 40 + 20 distinct active features
            Scenario::DimensionalitySweep => vec![100.0, 200.0, 500.0, 1000.0, 2000.0],
        }
    }

    pub fn sweep_name(&self) -> &'static str {
        match self {
            Scenario::SharedFractionSweep => "shared_fraction",
            Scenario::MinoritySizeSweep => "n2",
            Scenario::DimensionalitySweep => "p",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Scenario {
    type Err = JfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "shared_fraction_sweep" => Ok(Scenario::SharedFractionSweep),
            "2" | "minority_size_sweep" => Ok(Scenario::MinoritySizeSweep),
            "3" | "dimensionality_sweep" => Ok(Scenario::DimensionalitySweep),
            other => Err(JfmError::Config(format!("unknown scenario {other:?} (expected 1, 2 or 3)"))),
        }
    }
}

/// How intercepts are matched to the target prevalences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// σ(b) = target: prevalence of a subject at the covariate mean.
    #[default]
    Baseline,
    /// mean σ(b + xβ) = target over the covariate distribution.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    /// Active features per group; `None` means 40% of p (40 in scenario 3).
    pub n_nonzero: Option<usize>,
    /// `None` means 0.5.
    pub shared_fraction: Option<f64>,
    pub coef_value: f64,
    /// Target prevalence per group (over-represented group first).
    pub prevalence: Vec<f64>,
    pub n_test: usize,
    pub replicates: usize,
    pub seed: u64,
    pub calibration: Calibration,
    /// Sweep values; `None` uses the scenario's default grid.
    pub sweep: Option<Vec<f64>>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::SharedFractionSweep,
            p: 100,
            n1: 500,
            n2: 200,
            n_nonzero: None,
            shared_fraction: None,
            coef_value: 3.0,
            prevalence: vec![0.5, 0.3],
            n_test: 1000,
            replicates: 20,
            seed: 0,
            calibration: Calibration::Baseline,
            sweep: None,
        }
    }
}

impl ScenarioSpec {
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self { scenario, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn n_nonzero(&self) -> usize {
        self.n_nonzero.unwrap_or_else(|| match self.scenario {
            Scenario::DimensionalitySweep => 40,
            _ => (0.4 * self.p as f64).round() as usize,
        })
    }

    pub fn shared_fraction(&self) -> f64 {
        self.shared_fraction.unwrap_or(0.5)
    }

    /// Number of shared active features.
    pub fn n_shared(&self) -> usize {
        (self.shared_fraction() * self.n_nonzero() as f64).round() as usize
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.clone().unwrap_or_else(|| self.scenario.default_sweep())
    }

    /// The spec with the swept quantity set to `value`.
    pub fn at(&self, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match self.scenario {
            Scenario::SharedFractionSweep => s.shared_fraction = Some(value),
            Scenario::MinoritySizeSweep => s.n2 = as_count("n2", value)?,
            Scenario::DimensionalitySweep => s.p = as_count("p", value)?,
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let nz = self.n_nonzero();
        if self.p == 0 || self.n1 == 0 || self.n2 == 0 || self.n_test == 0 {
            return Err(JfmError::Config("p, n1, n2 and n_test must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(JfmError::Config("replicates must be at least 1".into()));
        }
        let sf = self.shared_fraction();
        if !(0.0..=1.0).contains(&sf) {
            return Err(JfmError::Config(format!("shared_fraction must lie in [0, 1], got {sf}")));
        }
        if nz > self.p {
            return Err(JfmError::Config(format!("n_nonzero {nz} exceeds p {}", self.p)));
        }
        let distinct = 2 * nz - self.n_shared();
        if distinct > self.p {
            return Err(JfmError::Config(format!(
                "{distinct} distinct active features (n_nonzero {nz}, shared {}) do not fit in p = {}",
                self.n_shared(),
                self.p
            )));
        }
        if self.prevalence.len() != 2 {
            return Err(JfmError::Config(format!("need 2 prevalences, got {}", self.prevalence.len())));
        }
        if let Some(v) = self.prevalence.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(JfmError::Config(format!("prevalence {v} outside (0, 1)")));
        }
        if !self.coef_value.is_finite() {
            return Err(JfmError::Config("coef_value must be finite".into()));
        }
        Ok(())
    }

    fn sizes(&self) -> [usize; 2] {
        [self.n1, self.n2]
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(JfmError::Config(format!("{name} sweep value must be a positive integer, got {v}")))
    }
}

/// logit(target).
pub fn calibrate_intercept(target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(JfmError::Domain(format!("target prevalence must lie in (0, 1), got {target}")));
    }
    Ok((target / (1.0 - target)).ln())
}

/// Intercept b with mean σ(b + η) = target over the given linear predictors.
pub fn calibrate_marginal(target: f64, eta: &[f64]) -> Result<f64> {
    calibrate_intercept(target)?;
    if eta.is_empty() {
        return Err(JfmError::Precondition("no linear predictors to calibrate against".into()));
    }
    let mean_at = |b: f64| eta.iter().map(|e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let spread = eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let (mut lo, mut hi) = (-spread - 40.0, spread + 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTruth {
    pub beta_true: Vec<Vec<f64>>,
    pub intercepts_true: Vec<f64>,
    pub support_sets: Vec<Vec<usize>>,
}

/// Supports: shared indices first, then group-1-only, then group-2-only.
fn supports(spec: &ScenarioSpec) -> [Vec<usize>; 2] {
    let nz = spec.n_nonzero();
    let s = spec.n_shared();
    let own = nz - s;
    let shared: Vec<usize> = (0..s).collect();
    let first: Vec<usize> = shared.iter().copied().chain(s..s + own).collect();
    let second: Vec<usize> = shared.iter().copied().chain(s + own..s + 2 * own).collect();
    [first, second]
}

/// Seeded generator for `(seed, replicate, stream)`.
fn stream_rng(seed: u64, replicate: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 8) | stream);
    rng
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;

/// The true coefficients and intercepts for a resolved spec.
pub fn simulated_truth(spec: &ScenarioSpec, replicate: usize) -> Result<SimulatedTruth> {
    spec.validate()?;
    let support_sets = supports(spec);
    let beta_true: Vec<Vec<f64>> = support_sets
        .iter()
        .map(|supp| {
            let mut b = vec![0.0; spec.p];
            for &j in supp {
                b[j] = spec.coef_value;
            }
            b
        })
        .collect();
    let intercepts_true = match spec.calibration {
        Calibration::Baseline => spec.prevalence.iter().map(|&t| calibrate_intercept(t)).collect::<Result<_>>()?,
        Calibration::Marginal => {
            let mut rng = stream_rng(spec.seed, replicate, CALIBRATION_STREAM);
            let x = normal_matrix(&mut rng, MARGINAL_CALIBRATION_SAMPLES, spec.p);
            beta_true
                .iter()
                .zip(&spec.prevalence)
                .map(|(b, &t)| {
                    let eta = x.dot(&Array1::from(b.clone()));
                    calibrate_marginal(t, eta.as_slice().expect("contiguous"))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(SimulatedTruth { beta_true, intercepts_true, support_sets: support_sets.to_vec() })
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
}

pub fn group_ids() -> [String; 2] {
    ["group1".to_string(), "group2".to_string()]
}

fn draw_design(spec: &ScenarioSpec, truth: &SimulatedTruth, sizes: [usize; 2], rng: &mut ChaCha8Rng) -> Result<GroupedDesign> {
    let groups = group_ids()
        .into_iter()
        .zip(sizes)
        .enumerate()
        .map(|(k, (id, n))| {
            let x = normal_matrix(rng, n, spec.p);
            let eta = x.dot(&Array1::from(truth.beta_true[k].clone())) + truth.intercepts_true[k];
            let y = eta.mapv(|e| if rng.random::<f64>() < sigmoid(e) { 1.0 } else { 0.0 });
            GroupData { id, x, y }
        })
        .collect();
    GroupedDesign::new(groups, (1..=spec.p).map(|j| format!("x{j}")).collect())
}

/// Training set, test set and truth for one replicate of a resolved spec.
pub fn generate_scenario(spec: &ScenarioSpec, replicate: usize) -> Result<(GroupedDesign, GroupedDesign, SimulatedTruth)> {
    let truth = simulated_truth(spec, replicate)?;
    let train = draw_design(spec, &truth, spec.sizes(), &mut stream_rng(spec.seed, replicate, TRAIN_STREAM))?;
    let test = draw_design(spec, &truth, [spec.n_test; 2], &mut stream_rng(spec.seed, replicate, TEST_STREAM))?;
    Ok((train, test, truth))
}

/// Hyperparameters applied without tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHypers {
    pub lambda_f: f64,
    pub lambda_sim: f64,
    /// One value shared by all groups, or one per group.
    pub lambda_sp: Vec<f64>,
}

impl Default for ModelHypers {
    fn default() -> Self {
        Self { lambda_f: 0.0, lambda_sim: 0.0, lambda_sp: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperChoice {
    Fixed(BTreeMap<ModelKind, ModelHypers>),
    Tuned { grid: HyperGrid, cv: CVConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub models: Vec<ModelKind>,
    pub hypers: HyperChoice,
    pub fit: FitOptions,
    pub cutoff: f64,
}

/// λF = λSim = λSp = 0.01 for every model.
pub fn default_hypers() -> BTreeMap<ModelKind, ModelHypers> {
    ModelKind::ALL
        .into_iter()
        .map(|k| (k, ModelHypers { lambda_f: 0.01, lambda_sim: 0.01, lambda_sp: vec![0.01] }))
        .collect()
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self::fixed(ModelKind::ALL.to_vec(), default_hypers())
    }
}

impl StudyConfig {
    pub fn fixed(models: Vec<ModelKind>, hypers: BTreeMap<ModelKind, ModelHypers>) -> Self {
        Self { models, hypers: HyperChoice::Fixed(hypers), fit: FitOptions::default(), cutoff: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub truth: SimulatedTruth,
    pub reports: BTreeMap<ModelKind, MetricReport>,
    pub hypers: BTreeMap<ModelKind, ModelHypers>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPointResult {
    pub sweep_value: f64,
    pub outcomes: Vec<ReplicateOutcome>,
    /// (replicate, message) for every excluded replicate.
    pub failures: Vec<(usize, String)>,
    pub summary: Vec<SummaryRow>,
}

impl SweepPointResult {
    /// Values of `metric` for `model` across successful replicates.
    pub fn values(&self, model: ModelKind, metric: &str) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter_map(|o| o.reports.get(&model))
            .filter_map(|r| r.flatten().into_iter().find(|(n, _)| n == metric).map(|(_, v)| v))
            .collect()
    }

    pub fn median(&self, model: ModelKind, metric: &str) -> Option<f64> {
        self.summary.iter().find(|r| r.model == model.as_str() && r.metric == metric).map(|r| r.median)
    }
}

fn run_one(spec: &ScenarioSpec, study: &StudyConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let (train, test, truth) = generate_scenario(spec, replicate)?;
    let mut reports = BTreeMap::new();
    let mut used = BTreeMap::new();
    for &kind in &study.models {
        let h = match &study.hypers {
            HyperChoice::Fixed(map) => map.get(&kind).cloned().ok_or_else(|| {
                JfmError::Config(format!("no fixed hyperparameters given for model {kind}"))
            })?,
            HyperChoice::Tuned { grid, cv } => {
                let cv = CVConfig { seed: cv.seed.wrapping_add(replicate as u64), ..cv.clone() };
                let best = grid_search(&train, kind, grid, &study.fit, &cv)?.best;
                ModelHypers { lambda_f: best.lambda_f, lambda_sim: best.lambda_sim, lambda_sp: best.lambda_sp }
            }
        };
        let fit = fit_model(kind, &train, h.lambda_f, h.lambda_sim, &h.lambda_sp, &study.fit)?;
        if !fit.convergence.converged {
            log::debug!("replicate {replicate}: {kind} stopped at max_iter");
        }
        reports.insert(kind, evaluate(&fit, &test, study.cutoff, Some(&truth.beta_true))?);
        used.insert(kind, h);
    }
    Ok(ReplicateOutcome { replicate, truth, reports, hypers: used })
}

/// Runs every replicate of one resolved spec. Failed replicates are
/// excluded and counted; more than half failing is an error.
pub fn run_replicates(spec: &ScenarioSpec, sweep_value: f64, study: &StudyConfig) -> Result<SweepPointResult> {
    spec.validate()?;
    if study.models.is_empty() {
        return Err(JfmError::Config("no models selected".into()));
    }
    let results: Vec<Result<ReplicateOutcome>> =
        (0..spec.replicates).into_par_iter().map(|r| run_one(spec, study, r)).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if 2 * failures.len() > spec.replicates {
        return Err(JfmError::Replicates { failed: failures.len(), total: spec.replicates });
    }
    let mut summary = Vec::new();
    for &kind in &study.models {
        let reports: Vec<MetricReport> = outcomes.iter().map(|o| o.reports[&kind].clone()).collect();
        summary.extend(summarize_reports(sweep_value, kind.as_str(), &reports)?);
    }
    Ok(SweepPointResult { sweep_value, outcomes, failures, summary })
}

/// Runs every sweep point of `spec` in order.
pub fn run_sweep(spec: &ScenarioSpec, study: &StudyConfig) -> Result<Vec<SweepPointResult>> {
    spec.sweep_values()
        .into_iter()
        .map(|v| run_replicates(&spec.at(v)?, v, study))
        .collect()
}
