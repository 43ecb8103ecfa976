//! Multi-group labeled design matrices: ingestion, standardization and
//! class-conditional feature means.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{JfmError, Result};

/// One group's samples: features `x` (n_k × p) and binary outcomes `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub id: String,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl GroupData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Row indices with outcome `label` (the set S_{ky}).
    pub fn class_indices(&self, label: u8) -> Vec<usize> {
        let target = f64::from(label);
        self.y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == target)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_count(&self, label: u8) -> usize {
        let target = f64::from(label);
        self.y.iter().filter(|&&v| v == target).count()
    }
}

/// K groups sharing a common feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    groups: Vec<GroupData>,
    feature_names: Vec<String>,
}

impl GroupedDesign {
    pub fn new(groups: Vec<GroupData>, feature_names: Vec<String>) -> Result<Self> {
        if groups.is_empty() {
            return Err(JfmError::Precondition("design needs at least one group".into()));
        }
        let p = feature_names.len();
        let mut seen = HashMap::new();
        for (k, g) in groups.iter().enumerate() {
            if let Some(prev) = seen.insert(g.id.clone(), k) {
                return Err(JfmError::Precondition(format!(
                    "group id {:?} appears twice (positions {prev} and {k})",
                    g.id
                )));
            }
            if g.x.ncols() != p {
                return Err(JfmError::Precondition(format!(
                    "group {:?} has {} feature columns, expected {p}",
                    g.id,
                    g.x.ncols()
                )));
            }
            if g.x.nrows() != g.y.len() {
                return Err(JfmError::Precondition(format!(
                    "group {:?}: {} rows but {} labels",
                    g.id,
                    g.x.nrows(),
                    g.y.len()
                )));
            }
            if g.y.is_empty() {
                return Err(JfmError::Precondition(format!("group {:?} is empty", g.id)));
            }
            if let Some(bad) = g.y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(JfmError::Precondition(format!(
                    "group {:?} has non-binary label {bad}",
                    g.id
                )));
            }
            if g.x.iter().any(|v| !v.is_finite()) {
                return Err(JfmError::Precondition(format!(
                    "group {:?} has non-finite feature values",
                    g.id
                )));
            }
        }
        Ok(Self { groups, feature_names })
    }

    pub fn groups(&self) -> &[GroupData] {
        &self.groups
    }

    pub fn group(&self, k: usize) -> &GroupData {
        &self.groups[k]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(GroupData::n).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(GroupData::n).collect()
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.id.clone()).collect()
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    /// Fails naming the first (group, class) cell with no samples.
    pub fn require_both_classes(&self) -> Result<()> {
        for g in &self.groups {
            for label in [0u8, 1] {
                if g.class_count(label) == 0 {
                    return Err(JfmError::Precondition(format!(
                        "group {:?} has no samples with y={label}",
                        g.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps the listed rows of every group, in the given order.
    pub fn subset(&self, rows: &[Vec<usize>]) -> Result<Self> {
        if rows.len() != self.groups.len() {
            return Err(JfmError::Precondition(format!(
                "subset needs {} row lists, got {}",
                self.groups.len(),
                rows.len()
            )));
        }
        let groups = self
            .groups
            .iter()
            .zip(rows)
            .map(|(g, idx)| GroupData {
                id: g.id.clone(),
                x: g.x.select(Axis(0), idx),
                y: g.y.select(Axis(0), idx),
            })
            .collect();
        Self::new(groups, self.feature_names.clone())
    }

    /// Keeps only the listed groups, in the given order.
    pub fn subset_groups(&self, which: &[usize]) -> Result<Self> {
        let groups = which
            .iter()
            .map(|&k| {
                self.groups.get(k).cloned().ok_or_else(|| {
                    JfmError::Precondition(format!("group index {k} out of range ({} groups)", self.groups.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(groups, self.feature_names.clone())
    }

    /// All groups stacked in order; returns (X, y, group index per row).
    pub fn pooled(&self) -> (Array2<f64>, Array1<f64>, Vec<usize>) {
        let views: Vec<_> = self.groups.iter().map(|g| g.x.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views)
            .unwrap_or_else(|_| Array2::zeros((0, self.n_features())));
        let y: Array1<f64> = self.groups.iter().flat_map(|g| g.y.iter().copied()).collect();
        let membership = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(k, g)| std::iter::repeat_n(k, g.n()))
            .collect();
        (x, y, membership)
    }
}

/// Pooled column means and population standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl StandardizationParams {
    pub fn identity(p: usize) -> Self {
        Self { means: vec![0.0; p], scales: vec![1.0; p] }
    }

    pub fn apply_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(JfmError::Precondition(format!(
                "matrix has {} columns, standardization expects {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    /// Transforms every group with these (typically training) statistics.
    pub fn apply(&self, design: &GroupedDesign) -> Result<GroupedDesign> {
        let groups = design
            .groups()
            .iter()
            .map(|g| {
                Ok(GroupData { id: g.id.clone(), x: self.apply_matrix(&g.x)?, y: g.y.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        GroupedDesign::new(groups, design.feature_names().to_vec())
    }
}

/// Standardizes with pooled statistics across all groups.
///
/// Constant columns keep their position: they are centered and their scale is
/// recorded as 1, with a warning.
pub fn standardize(design: &GroupedDesign) -> Result<(GroupedDesign, StandardizationParams)> {
    let p = design.n_features();
    let n = design.n_total() as f64;
    let mut means = vec![0.0; p];
    for g in design.groups() {
        for row in g.x.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    means.iter_mut().for_each(|m| *m /= n);

    let mut scales = vec![0.0; p];
    for g in design.groups() {
        for row in g.x.rows() {
            for j in 0..p {
                let d = row[j] - means[j];
                scales[j] += d * d;
            }
        }
    }
    for (j, s) in scales.iter_mut().enumerate() {
        *s = (*s / n).sqrt();
        if !(*s > 0.0) {
            log::warn!(
                "feature {:?} is constant; scale forced to 1",
                design.feature_names()[j]
            );
            *s = 1.0;
        }
    }
    let params = StandardizationParams { means, scales };
    let out = params.apply(design)?;
    Ok((out, params))
}

/// Class-conditional means X̄_{ky}, row `2k + y` for group k and label y.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    rows: Array2<f64>,
    groups: usize,
}

impl ClassMeans {
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    pub fn mean(&self, k: usize, label: u8) -> ndarray::ArrayView1<'_, f64> {
        self.rows.row(2 * k + label as usize)
    }

    pub fn as_matrix(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Builds from explicit rows ordered `(k=0,y=0), (k=0,y=1), (k=1,y=0), …`.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() % 2 != 0 {
            return Err(JfmError::Precondition(
                "class means need two rows (y=0, y=1) per group".into(),
            ));
        }
        let groups = rows.nrows() / 2;
        Ok(Self { rows, groups })
    }

    /// Appends a constant column (1 for an intercept-inclusive convention,
    /// 0 to exclude the intercept).
    pub fn augmented(&self, value: f64) -> Self {
        let mut rows = Array2::from_elem((self.rows.nrows(), self.width() + 1), value);
        rows.slice_mut(ndarray::s![.., ..self.width()]).assign(&self.rows);
        Self { rows, groups: self.groups }
    }
}

/// Mean feature vector of group `k`'s samples with outcome `label`.
pub fn class_mean(design: &GroupedDesign, k: usize, label: u8) -> Result<Array1<f64>> {
    let g = design.group(k);
    let idx = g.class_indices(label);
    if idx.is_empty() {
        return Err(JfmError::Precondition(format!(
            "group {:?} (k={k}) has no samples with y={label}",
            g.id
        )));
    }
    let mut sum = Array1::zeros(design.n_features());
    for &i in &idx {
        sum += &g.x.row(i);
    }
    Ok(sum / idx.len() as f64)
}

/// X̄_{ky} for every group and both labels; `augment` appends an intercept
/// column of ones.
pub fn class_conditional_means(design: &GroupedDesign, augment: bool) -> Result<ClassMeans> {
    let k = design.n_groups();
    let mut rows = Array2::zeros((2 * k, design.n_features()));
    for g in 0..k {
        for label in [0u8, 1] {
            rows.row_mut(2 * g + label as usize).assign(&class_mean(design, g, label)?);
        }
    }
    let means = ClassMeans { rows, groups: k };
    Ok(if augment { means.augmented(1.0) } else { means })
}

/// Reads a CSV with a header row. One group per distinct `group_col` value,
/// ordered by first appearance; every other non-label column is a feature.
pub fn load_csv(path: impl AsRef<Path>, group_col: &str, label_col: &str) -> Result<GroupedDesign> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, group_col, label_col)
}

pub fn read_csv<R: std::io::Read>(reader: R, group_col: &str, label_col: &str) -> Result<GroupedDesign> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| JfmError::Schema(format!("missing column {name:?}")))
    };
    let gi = find(group_col)?;
    let li = find(label_col)?;
    if gi == li {
        return Err(JfmError::Schema("group and label columns must differ".into()));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != gi && c != li).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<Vec<f64>> = Vec::new();

    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let gid = rec.get(gi).unwrap_or_default().to_string();
        let label_text = rec.get(li).unwrap_or_default().trim();
        let label: f64 = label_text.parse().map_err(|_| JfmError::Parse {
            row,
            message: format!("label {label_text:?} is not a number"),
        })?;
        if label != 0.0 && label != 1.0 {
            return Err(JfmError::Parse {
                row,
                message: format!("label {label_text:?} is not 0 or 1"),
            });
        }
        let k = *index.entry(gid.clone()).or_insert_with(|| {
            order.push(gid.clone());
            values.push(Vec::new());
            labels.push(Vec::new());
            order.len() - 1
        });
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            let text = rec.get(c).unwrap_or_default().trim();
            let v: f64 = text.parse().map_err(|_| JfmError::Parse {
                row,
                message: format!("column {name:?}: {text:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(JfmError::Parse {
                    row,
                    message: format!("column {name:?}: non-finite value {text:?}"),
                });
            }
            values[k].push(v);
        }
        labels[k].push(label);
    }
    if order.is_empty() {
        return Err(JfmError::Schema("file has no data rows".into()));
    }
    let p = feature_names.len();
    let groups = order
        .into_iter()
        .zip(values.into_iter().zip(labels))
        .map(|(id, (vals, ys))| {
            let n = ys.len();
            let x = Array2::from_shape_vec((n, p), vals)
                .map_err(|e| JfmError::Schema(e.to_string()))?;
            Ok(GroupData { id, x, y: Array1::from(ys) })
        })
        .collect::<Result<Vec<_>>>()?;
    GroupedDesign::new(groups, feature_names)
}

/// Writes `group_col, features…, label_col`, groups in order. Values use the
/// shortest decimal representation that round-trips.
pub fn write_csv(
    design: &GroupedDesign,
    path: impl AsRef<Path>,
    group_col: &str,
    label_col: &str,
) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(design, file, group_col, label_col)
}

pub fn write_csv_to<W: std::io::Write>(
    design: &GroupedDesign,
    writer: W,
    group_col: &str,
    label_col: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![group_col.to_string()];
    header.extend(design.feature_names().iter().cloned());
    header.push(label_col.to_string());
    w.write_record(&header)?;
    for g in design.groups() {
        for (row, y) in g.x.rows().into_iter().zip(g.y.iter()) {
            let mut rec = vec![g.id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push((*y as u8).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
