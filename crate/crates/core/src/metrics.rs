//! Accuracy, calibration, fairness-disparity and selection metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDesign;
use crate::error::{JfmError, Result};
use crate::models::{predict, FitResult};

/// Absolute tolerance under which an estimated coefficient counts as zero.
pub const SELECTION_TOL: f64 = 1e-8;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(JfmError::Precondition(format!("length mismatch: {a} scores vs {b} labels")));
    }
    Ok(())
}

/// Midranks (1-based) of `v`; tied values share the average rank.
fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// ROC AUC via the Mann–Whitney rank statistic with midrank ties.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let ranks = midranks(scores);
    let mut n_pos = 0usize;
    let mut rank_sum = 0.0;
    for (r, &y) in ranks.iter().zip(labels) {
        if y == 1.0 {
            n_pos += 1;
            rank_sum += r;
        }
    }
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(JfmError::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean squared deviation between probabilities and labels.
pub fn brier(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(JfmError::UndefinedMetric("Brier score of an empty sample".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(JfmError::Domain(format!("probability {p} outside [0, 1]")));
    }
    let sum: f64 = probs.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(sum / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
    pub tnr: f64,
}

fn counts(probs: &[f64], labels: &[f64], cutoff: f64, label: f64) -> Result<(usize, usize)> {
    check_lengths(probs.len(), labels.len())?;
    let mut total = 0;
    let mut predicted_pos = 0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y == label {
            total += 1;
            predicted_pos += usize::from(p >= cutoff);
        }
    }
    if total == 0 {
        return Err(JfmError::UndefinedMetric(format!("no samples in class y={label}")));
    }
    Ok((total, predicted_pos))
}

/// P̂(ŷ=1 | y=0); only the negative class must be present.
pub fn false_positive_rate(probs: &[f64], labels: &[f64], cutoff: f64) -> Result<f64> {
    let (n, fp) = counts(probs, labels, cutoff, 0.0)?;
    Ok(fp as f64 / n as f64)
}

/// P̂(ŷ=0 | y=1); only the positive class must be present.
pub fn false_negative_rate(probs: &[f64], labels: &[f64], cutoff: f64) -> Result<f64> {
    let (n, tp) = counts(probs, labels, cutoff, 1.0)?;
    Ok((n - tp) as f64 / n as f64)
}

/// Rates at `cutoff`; a probability equal to the cutoff is classified positive.
pub fn confusion_rates(probs: &[f64], labels: &[f64], cutoff: f64) -> Result<ConfusionRates> {
    check_lengths(probs.len(), labels.len())?;
    let (mut tp, mut fnc, mut fp, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (y == 1.0, p >= cutoff) {
            (true, true) => tp += 1,
            (true, false) => fnc += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    if tp + fnc == 0 {
        return Err(JfmError::UndefinedMetric("no samples in class y=1".into()));
    }
    if fp + tn == 0 {
        return Err(JfmError::UndefinedMetric("no samples in class y=0".into()));
    }
    let fpr = fp as f64 / (fp + tn) as f64;
    let fnr = fnc as f64 / (tp + fnc) as f64;
    Ok(ConfusionRates { fpr, fnr, tpr: tp as f64 / (tp + fnc) as f64, tnr: tn as f64 / (fp + tn) as f64 })
}

/// Per-group `(1/p) Σ (β̂ − β)²`, intercepts excluded.
pub fn coefficient_mse(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    if est.len() != truth.len() {
        return Err(JfmError::Precondition(format!("{} estimated groups vs {} true", est.len(), truth.len())));
    }
    est.iter()
        .zip(truth)
        .map(|(e, t)| {
            if e.len() != t.len() || e.is_empty() {
                return Err(JfmError::Precondition(format!(
                    "coefficient length mismatch: {} vs {}",
                    e.len(),
                    t.len()
                )));
            }
            Ok(e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / e.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRates {
    pub tpr_sel: f64,
    pub tnr_sel: f64,
}

/// Support recovery for one coefficient vector.
pub fn selection_rates(est: &[f64], truth: &[f64], tol: f64) -> Result<SelectionRates> {
    check_lengths(est.len(), truth.len())?;
    let (mut pos, mut hit, mut neg, mut rej) = (0usize, 0usize, 0usize, 0usize);
    for (&e, &t) in est.iter().zip(truth) {
        if t != 0.0 {
            pos += 1;
            hit += usize::from(e.abs() > tol);
        } else {
            neg += 1;
            rej += usize::from(e.abs() <= tol);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(JfmError::UndefinedMetric(format!(
            "selection rates need zero and nonzero true coefficients ({pos} nonzero, {neg} zero)"
        )));
    }
    Ok(SelectionRates { tpr_sel: hit as f64 / pos as f64, tnr_sel: rej as f64 / neg as f64 })
}

/// max − min over groups.
pub fn disparity(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(JfmError::Precondition(format!("disparity needs at least two groups, got {}", values.len())));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(JfmError::Precondition("harmonic mean of no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(JfmError::Domain(format!("harmonic mean needs positive values, got {v}")));
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

pub fn arithmetic_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub auc: f64,
    pub brier: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub avg_tpr_tnr: f64,
}

impl GroupMetrics {
    pub fn compute(probs: &[f64], labels: &[f64], cutoff: f64) -> Result<Self> {
        let rates = confusion_rates(probs, labels, cutoff)?;
        Ok(Self {
            auc: auc(probs, labels)?,
            brier: brier(probs, labels)?,
            fpr: rates.fpr,
            fnr: rates.fnr,
            tpr: rates.tpr,
            tnr: rates.tnr,
            avg_tpr_tnr: (rates.tpr + rates.tnr) / 2.0,
        })
    }

    fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("auc", self.auc),
            ("brier", self.brier),
            ("fpr", self.fpr),
            ("fnr", self.fnr),
            ("tpr", self.tpr),
            ("tnr", self.tnr),
            ("avg_tpr_tnr", self.avg_tpr_tnr),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationMetrics {
    pub mse: f64,
    pub tpr_sel: f64,
    pub tnr_sel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_group: BTreeMap<String, GroupMetrics>,
    /// Metrics on the pooled predictions of all groups.
    pub overall: GroupMetrics,
    pub disparity: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<BTreeMap<String, EstimationMetrics>>,
    pub cutoff: f64,
}

impl MetricReport {
    /// Builds a report from per-group predictions; `groups` gives ids in order.
    pub fn from_predictions(
        groups: &[String],
        probs: &[Array1<f64>],
        labels: &[Array1<f64>],
        cutoff: f64,
    ) -> Result<Self> {
        let mut per_group = BTreeMap::new();
        let mut rows = Vec::with_capacity(groups.len());
        for ((id, p), y) in groups.iter().zip(probs).zip(labels) {
            let m = GroupMetrics::compute(p.as_slice().expect("contiguous"), y.as_slice().expect("contiguous"), cutoff)
                .map_err(|e| match e {
                    JfmError::UndefinedMetric(msg) => JfmError::UndefinedMetric(format!("group {id}: {msg}")),
                    other => other,
                })?;
            per_group.insert(id.clone(), m);
            rows.push(m);
        }
        let pooled_p: Vec<f64> = probs.iter().flat_map(|p| p.iter().copied()).collect();
        let pooled_y: Vec<f64> = labels.iter().flat_map(|y| y.iter().copied()).collect();
        let overall = GroupMetrics::compute(&pooled_p, &pooled_y, cutoff)?;
        let mut disp = BTreeMap::new();
        if rows.len() >= 2 {
            for (i, (name, _)) in rows[0].fields().iter().enumerate() {
                let vals: Vec<f64> = rows.iter().map(|m| m.fields()[i].1).collect();
                disp.insert(name.to_string(), disparity(&vals)?);
            }
        }
        Ok(Self { per_group, overall, disparity: disp, estimation: None, cutoff })
    }

    /// Flat `(metric name, value)` list used for replicate summaries.
    pub fn flatten(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (id, m) in &self.per_group {
            for (name, v) in m.fields() {
                out.push((format!("{name}_{id}"), v));
            }
        }
        for (name, v) in self.overall.fields() {
            out.push((format!("{name}_overall"), v));
        }
        for (name, v) in &self.disparity {
            out.push((format!("disparity_{name}"), *v));
        }
        if let Some(est) = &self.estimation {
            for (id, e) in est {
                out.push((format!("mse_{id}"), e.mse));
                out.push((format!("tpr_sel_{id}"), e.tpr_sel));
                out.push((format!("tnr_sel_{id}"), e.tnr_sel));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates `fit` on `design`. When `truth` holds the true per-group
/// coefficient vectors (design order), estimation metrics are added.
pub fn evaluate(
    fit: &FitResult,
    design: &GroupedDesign,
    cutoff: f64,
    truth: Option<&[Vec<f64>]>,
) -> Result<MetricReport> {
    check_features(fit, design)?;
    let ids = design.group_ids();
    let probs = design
        .groups()
        .iter()
        .map(|g| predict(fit, &g.x, &g.id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<_> = design.groups().iter().map(|g| g.y.clone()).collect();
    let mut report = MetricReport::from_predictions(&ids, &probs, &labels, cutoff)?;
    if let Some(truth) = truth {
        if truth.len() != ids.len() {
            return Err(JfmError::Precondition(format!("{} truth vectors for {} groups", truth.len(), ids.len())));
        }
        let est: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| fit.group_index(id).map(|k| fit.coefficients[k].clone()))
            .collect::<Result<_>>()?;
        let mse = coefficient_mse(&est, truth)?;
        let mut map = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let sel = selection_rates(&est[i], &truth[i], SELECTION_TOL)?;
            map.insert(id.clone(), EstimationMetrics { mse: mse[i], tpr_sel: sel.tpr_sel, tnr_sel: sel.tnr_sel });
        }
        report.estimation = Some(map);
    }
    Ok(report)
}

/// Fails when the design's feature names differ from the fit's, listing the differences.
pub fn check_features(fit: &FitResult, design: &GroupedDesign) -> Result<()> {
    if fit.feature_names.as_slice() == design.feature_names() {
        return Ok(());
    }
    let missing: Vec<_> = fit.feature_names.iter().filter(|f| !design.feature_names().contains(f)).collect();
    let extra: Vec<_> = design.feature_names().iter().filter(|f| !fit.feature_names.contains(f)).collect();
    Err(JfmError::Schema(format!(
        "feature mismatch: missing {missing:?}, unexpected {extra:?}{}",
        if missing.is_empty() && extra.is_empty() { " (order differs)" } else { "" }
    )))
}

/// Type-7 quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (median, q1, q3) of `values`.
pub fn summarize(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(JfmError::Precondition("cannot summarize an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub model: String,
    pub metric: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Median/IQR per metric over a set of replicate reports.
pub fn summarize_reports(sweep_value: f64, model: &str, reports: &[MetricReport]) -> Result<Vec<SummaryRow>> {
    let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.flatten() {
            by_metric.entry(name).or_default().push(v);
        }
    }
    by_metric
        .into_iter()
        .map(|(metric, vals)| {
            let (median, q1, q3) = summarize(&vals)?;
            Ok(SummaryRow { sweep_value, model: model.to_string(), metric, median, q1, q3 })
        })
        .collect()
}

pub fn write_summary_csv_to<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    write_summary_csv_to(std::fs::File::create(path)?, rows)
}
