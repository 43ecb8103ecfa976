//! Stratified k-fold cross-validation and hyperparameter grid search.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDesign;
use crate::error::{JfmError, Result};
use crate::metrics::{arithmetic_mean, disparity, harmonic_mean, GroupMetrics};
use crate::models::{fit_model, predict, FitOptions, ModelKind};

/// How a base λSp is spread over groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    /// Every combination of per-group values from the λSp list.
    Independent,
    /// λSp_k = λSp / √n_k.
    #[default]
    InverseSqrtN,
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub lambda_f: Vec<f64>,
    pub lambda_sim: Vec<f64>,
    pub lambda_sp: Vec<f64>,
    pub c_mode: CMode,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let pts = log_space(1e-3, 10.0, 8);
        Self { lambda_f: pts.clone(), lambda_sim: pts.clone(), lambda_sp: pts, c_mode: CMode::InverseSqrtN }
    }
}

impl HyperGrid {
    pub fn single(lambda_f: f64, lambda_sim: f64, lambda_sp: f64) -> Self {
        Self { lambda_f: vec![lambda_f], lambda_sim: vec![lambda_sim], lambda_sp: vec![lambda_sp], c_mode: CMode::InverseSqrtN }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("lambda_f", &self.lambda_f), ("lambda_sim", &self.lambda_sim), ("lambda_sp", &self.lambda_sp)] {
            if list.is_empty() {
                return Err(JfmError::Config(format!("grid list {name} is empty")));
            }
            if let Some(v) = list.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(JfmError::Config(format!("grid list {name} has invalid value {v}")));
            }
        }
        Ok(())
    }

    /// Grid cells for `kind`; dimensions the model does not use collapse to 0.
    pub fn cells(&self, kind: ModelKind, group_sizes: &[usize]) -> Vec<GridCell> {
        let k = group_sizes.len();
        let lf: &[f64] = if matches!(kind, ModelKind::Jfm | ModelKind::Sfm) { &self.lambda_f } else { &[0.0] };
        let ls: &[f64] = if kind == ModelKind::Jfm { &self.lambda_sim } else { &[0.0] };
        let sp: Vec<Vec<f64>> = match kind {
            ModelKind::Jfm => match self.c_mode {
                CMode::InverseSqrtN => self
                    .lambda_sp
                    .iter()
                    .map(|&l| group_sizes.iter().map(|&n| l / (n as f64).sqrt()).collect())
                    .collect(),
                CMode::Independent => cartesian_power(&self.lambda_sp, k),
            },
            ModelKind::Separate => self.lambda_sp.iter().map(|&l| vec![l; k]).collect(),
            ModelKind::Sfm | ModelKind::Ignorant => self.lambda_sp.iter().map(|&l| vec![l]).collect(),
        };
        let mut out = Vec::with_capacity(lf.len() * ls.len() * sp.len());
        for &f in lf {
            for &s in ls {
                for v in &sp {
                    out.push(GridCell { lambda_f: f, lambda_sim: s, lambda_sp: v.clone() });
                }
            }
        }
        out
    }
}

fn cartesian_power(values: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda_f: f64,
    pub lambda_sim: f64,
    /// One value per group, or a single shared value for SFM / group-ignorant.
    pub lambda_sp: Vec<f64>,
}

impl GridCell {
    fn sp_total(&self) -> f64 {
        self.lambda_sp.iter().sum()
    }

    /// Ordering by regularization strength: λSp total, then λSim, then λF.
    fn strength_cmp(&self, other: &Self) -> Ordering {
        self.sp_total()
            .total_cmp(&other.sp_total())
            .then(self.lambda_sim.total_cmp(&other.lambda_sim))
            .then(self.lambda_f.total_cmp(&other.lambda_f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    OverallAuc,
    GroupAvgAucHarmonic,
    GroupAvgAucArithmetic,
    GroupAvgAucMinusDisparity,
    OverallBrier,
    GroupAvgBrierHarmonic,
    GroupAvgBrierMinusDisparity,
}

impl Criterion {
    pub const ALL: [Criterion; 7] = [
        Criterion::OverallAuc,
        Criterion::GroupAvgAucHarmonic,
        Criterion::GroupAvgAucArithmetic,
        Criterion::GroupAvgAucMinusDisparity,
        Criterion::OverallBrier,
        Criterion::GroupAvgBrierHarmonic,
        Criterion::GroupAvgBrierMinusDisparity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::OverallAuc => "overall_auc",
            Criterion::GroupAvgAucHarmonic => "group_avg_auc_harmonic",
            Criterion::GroupAvgAucArithmetic => "group_avg_auc_arithmetic",
            Criterion::GroupAvgAucMinusDisparity => "group_avg_auc_minus_disparity",
            Criterion::OverallBrier => "overall_brier",
            Criterion::GroupAvgBrierHarmonic => "group_avg_brier_harmonic",
            Criterion::GroupAvgBrierMinusDisparity => "group_avg_brier_minus_disparity",
        }
    }

    /// Harmonic group AUC for the fairness models, pooled AUC for the
    /// group-ignorant model. Group-separate is tuned per group on AUC and
    /// only uses this for its summary column.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ignorant => Criterion::OverallAuc,
            ModelKind::Separate => Criterion::GroupAvgAucArithmetic,
            _ => Criterion::GroupAvgAucHarmonic,
        }
    }

    /// Higher is better; Brier criteria are negated.
    pub fn score(&self, per_group: &[GroupMetrics], overall: &GroupMetrics) -> Result<f64> {
        let aucs: Vec<f64> = per_group.iter().map(|m| m.auc).collect();
        let briers: Vec<f64> = per_group.iter().map(|m| m.brier).collect();
        Ok(match self {
            Criterion::OverallAuc => overall.auc,
            Criterion::GroupAvgAucHarmonic => harmonic_mean(&aucs)?,
            Criterion::GroupAvgAucArithmetic => arithmetic_mean(&aucs),
            Criterion::GroupAvgAucMinusDisparity => arithmetic_mean(&aucs) - spread(&aucs)?,
            Criterion::OverallBrier => -overall.brier,
            Criterion::GroupAvgBrierHarmonic => -harmonic_mean(&briers)?,
            Criterion::GroupAvgBrierMinusDisparity => -(arithmetic_mean(&briers) + spread(&briers)?),
        })
    }
}

fn spread(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        Ok(0.0)
    } else {
        disparity(values)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = JfmError;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL.into_iter().find(|c| c.as_str() == s.trim()).ok_or_else(|| {
            let names: Vec<_> = Criterion::ALL.iter().map(|c| c.as_str()).collect();
            JfmError::Config(format!("unknown criterion {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CVConfig {
    pub folds: usize,
    pub seed: u64,
    /// `None` picks the model's default criterion.
    pub criterion: Option<Criterion>,
    pub cutoff: f64,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self { folds: 5, seed: 0, criterion: None, cutoff: 0.5 }
    }
}

impl CVConfig {
    pub fn criterion_for(&self, kind: ModelKind) -> Criterion {
        self.criterion.unwrap_or_else(|| Criterion::default_for(kind))
    }
}

/// JSON document holding a grid and CV settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub grid: HyperGrid,
    pub cv: CVConfig,
}

impl TuningConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.grid.validate()?;
        Ok(cfg)
    }
}

/// Fold index for every sample, per group. Each (group, class) cell is
/// shuffled and dealt round-robin.
pub fn stratified_folds(design: &GroupedDesign, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(JfmError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut assignment = Vec::with_capacity(design.n_groups());
    for g in design.groups() {
        let mut fold_of = vec![0usize; g.n()];
        for label in [0u8, 1u8] {
            let mut idx = g.class_indices(label);
            if idx.len() < folds {
                return Err(JfmError::Config(format!(
                    "group {} class y={label} has {} samples, fewer than {folds} folds",
                    g.id,
                    idx.len()
                )));
            }
            // the shuffle depends only on (seed, class, cell size)
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from(label));
            idx.shuffle(&mut rng);
            for (i, &row) in idx.iter().enumerate() {
                fold_of[row] = i % folds;
            }
        }
        assignment.push(fold_of);
    }
    Ok(assignment)
}

/// (training rows, held-out rows) per group for fold `f`.
fn split_rows(assignment: &[Vec<usize>], f: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    assignment
        .iter()
        .map(|fold_of| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..fold_of.len()).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Mean over folds of the criterion.
    pub score: f64,
    /// Mean over folds of each group's held-out AUC.
    pub group_auc: Vec<f64>,
}

fn cv_with_assignment(
    design: &GroupedDesign,
    kind: ModelKind,
    cell: &GridCell,
    opts: &FitOptions,
    cv: &CVConfig,
    assignment: &[Vec<usize>],
) -> Result<CvOutcome> {
    let criterion = cv.criterion_for(kind);
    let k = design.n_groups();
    let mut scores = Vec::with_capacity(cv.folds);
    let mut aucs = vec![0.0; k];
    for f in 0..cv.folds {
        let (train_rows, test_rows) = split_rows(assignment, f);
        let train = design.subset(&train_rows)?;
        let test = design.subset(&test_rows)?;
        let fit = fit_model(kind, &train, cell.lambda_f, cell.lambda_sim, &cell.lambda_sp, opts)?;
        let mut per_group = Vec::with_capacity(k);
        let mut pooled_p = Vec::new();
        let mut pooled_y = Vec::new();
        for g in test.groups() {
            let probs = predict(&fit, &g.x, &g.id)?;
            let labels = g.y.as_slice().expect("contiguous");
            per_group.push(GroupMetrics::compute(probs.as_slice().expect("contiguous"), labels, cv.cutoff)?);
            pooled_p.extend(probs.iter().copied());
            pooled_y.extend_from_slice(labels);
        }
        let overall = GroupMetrics::compute(&pooled_p, &pooled_y, cv.cutoff)?;
        scores.push(criterion.score(&per_group, &overall)?);
        for (a, m) in aucs.iter_mut().zip(&per_group) {
            *a += m.auc / cv.folds as f64;
        }
    }
    Ok(CvOutcome { score: arithmetic_mean(&scores), group_auc: aucs })
}

/// Cross-validated criterion for one hyperparameter cell.
pub fn cv_score(
    design: &GroupedDesign,
    kind: ModelKind,
    cell: &GridCell,
    opts: &FitOptions,
    cv: &CVConfig,
) -> Result<CvOutcome> {
    let assignment = stratified_folds(design, cv.folds, cv.seed)?;
    cv_with_assignment(design, kind, cell, opts, cv, &assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub cell: GridCell,
    pub criterion: Criterion,
    /// NaN when the cell failed.
    pub score: f64,
    pub group_auc: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestHyper {
    pub model: ModelKind,
    pub lambda_f: f64,
    pub lambda_sim: f64,
    pub lambda_sp: Vec<f64>,
    pub criterion: Criterion,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: BestHyper,
    pub table: Vec<ScoreRow>,
    pub group_ids: Vec<String>,
}

/// Index of the best-scoring row; ties go to the more regularized cell.
fn argmax_by<F: Fn(&ScoreRow) -> f64>(rows: &[ScoreRow], key: F) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        let v = key(r);
        if !v.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let bv = key(&rows[b]);
                let better = v > bv || (v == bv && r.cell.strength_cmp(&rows[b].cell) == Ordering::Greater);
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Evaluates every grid cell by cross-validation and returns the best one
/// together with the full score table (grid order). Group-separate picks
/// each group's λSp independently by that group's held-out AUC.
pub fn grid_search(
    design: &GroupedDesign,
    kind: ModelKind,
    grid: &HyperGrid,
    opts: &FitOptions,
    cv: &CVConfig,
) -> Result<GridSearchResult> {
    grid.validate()?;
    let assignment = stratified_folds(design, cv.folds, cv.seed)?;
    let criterion = cv.criterion_for(kind);
    let cells = grid.cells(kind, &design.group_sizes());
    let k = design.n_groups();
    let table: Vec<ScoreRow> = cells
        .into_par_iter()
        .map(|cell| match cv_with_assignment(design, kind, &cell, opts, cv, &assignment) {
            Ok(out) => ScoreRow { cell, criterion, score: out.score, group_auc: out.group_auc, error: None },
            Err(e) => {
                log::warn!("grid cell {cell:?} failed: {e}");
                ScoreRow { cell, criterion, score: f64::NAN, group_auc: vec![f64::NAN; k], error: Some(e.to_string()) }
            }
        })
        .collect();
    if table.iter().all(|r| r.error.is_some()) {
        return Err(JfmError::GridFailed(table.len()));
    }
    let best = if kind == ModelKind::Separate {
        let mut lambda_sp = Vec::with_capacity(k);
        let mut group_best = Vec::with_capacity(k);
        for g in 0..k {
            let i = argmax_by(&table, |r| r.group_auc[g]).ok_or(JfmError::GridFailed(table.len()))?;
            lambda_sp.push(table[i].cell.lambda_sp[g]);
            group_best.push(table[i].group_auc[g]);
        }
        BestHyper { model: kind, lambda_f: 0.0, lambda_sim: 0.0, lambda_sp, criterion, score: arithmetic_mean(&group_best) }
    } else {
        let i = argmax_by(&table, |r| r.score).ok_or(JfmError::GridFailed(table.len()))?;
        let c = &table[i].cell;
        BestHyper {
            model: kind,
            lambda_f: c.lambda_f,
            lambda_sim: c.lambda_sim,
            lambda_sp: c.lambda_sp.clone(),
            criterion,
            score: table[i].score,
        }
    };
    Ok(GridSearchResult { best, table, group_ids: design.group_ids() })
}

/// Score table as CSV: lambda_f, lambda_sim, lambda_sp (`;`-joined per
/// group), criterion, score, then one AUC column per group.
pub fn write_score_table_to<W: Write>(writer: W, result: &GridSearchResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> =
        ["lambda_f", "lambda_sim", "lambda_sp", "criterion", "score"].iter().map(|s| s.to_string()).collect();
    header.extend(result.group_ids.iter().map(|g| format!("auc_{g}")));
    w.write_record(&header)?;
    for r in &result.table {
        let mut rec = vec![
            r.cell.lambda_f.to_string(),
            r.cell.lambda_sim.to_string(),
            r.cell.lambda_sp.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
            r.criterion.to_string(),
            r.score.to_string(),
        ];
        rec.extend(r.group_auc.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_score_table(path: impl AsRef<Path>, result: &GridSearchResult) -> Result<()> {
    write_score_table_to(std::fs::File::create(path)?, result)
}
