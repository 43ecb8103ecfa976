//! Fairness and fusion penalty matrices and the stacked operator
//! `[λF·D₀; λF·D₁; λSim·F]`.
//!
//! Coefficients are laid out as K consecutive blocks. A block holds the p
//! feature coefficients and, when the layout has an intercept slot, the
//! group intercept in its last position. Fusion rows never touch intercept
//! slots; fairness rows touch them only if the class means were augmented
//! with a one.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::data::ClassMeans;
use crate::error::{JfmError, Result};
use crate::linalg;

/// Unordered group pairs `j < k` in lexicographic order.
pub fn group_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|j| (j + 1..k).map(move |l| (j, l))).collect()
}

/// D₀ and D₁: one row per pair, X̄_{jy} in block j and −X̄_{ky} in block k.
/// Block width equals the width of the class means.
pub fn build_fairness_matrices(means: &ClassMeans) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = means.groups();
    if k < 2 {
        return Err(JfmError::Structural(format!(
            "fairness rows need at least two groups, got {k}"
        )));
    }
    let w = means.width();
    let pairs = group_pairs(k);
    let build = |label: u8| {
        let mut d = Array2::zeros((pairs.len(), k * w));
        for (r, &(j, l)) in pairs.iter().enumerate() {
            d.slice_mut(s![r, j * w..(j + 1) * w]).assign(&means.mean(j, label));
            d.slice_mut(s![r, l * w..(l + 1) * w]).assign(&(-&means.mean(l, label)));
        }
        d
    };
    Ok((build(0), build(1)))
}

/// Fairness rows for a single shared coefficient vector: `X̄_{jy} − X̄_{ky}`.
pub fn build_shared_fairness_matrices(means: &ClassMeans) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = means.groups();
    if k < 2 {
        return Err(JfmError::Structural(format!(
            "fairness rows need at least two groups, got {k}"
        )));
    }
    let pairs = group_pairs(k);
    let build = |label: u8| {
        let mut d = Array2::zeros((pairs.len(), means.width()));
        for (r, &(j, l)) in pairs.iter().enumerate() {
            d.row_mut(r).assign(&(&means.mean(j, label) - &means.mean(l, label)));
        }
        d
    };
    Ok((build(0), build(1)))
}

/// F for blocks of exactly p coefficients.
pub fn build_fusion_matrix(k: usize, p: usize) -> Result<Array2<f64>> {
    FusionBlocks::new(k, p, p)?.to_dense()
}

/// Complete-pairs fusion `+I_p` / `−I_p`, applied without materializing F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionBlocks {
    groups: usize,
    features: usize,
    width: usize,
}

impl FusionBlocks {
    pub fn new(groups: usize, features: usize, width: usize) -> Result<Self> {
        if groups < 2 {
            return Err(JfmError::Structural(format!(
                "fusion rows need at least two groups, got {groups}"
            )));
        }
        if width < features {
            return Err(JfmError::Structural("block width smaller than feature count".into()));
        }
        Ok(Self { groups, features, width })
    }

    pub fn rows(&self) -> usize {
        self.features * self.groups * (self.groups - 1) / 2
    }

    pub fn cols(&self) -> usize {
        self.groups * self.width
    }

    fn apply(&self, beta: ArrayView1<'_, f64>, out: &mut [f64]) {
        let (p, w) = (self.features, self.width);
        for (r, (j, l)) in group_pairs(self.groups).into_iter().enumerate() {
            for i in 0..p {
                out[r * p + i] = beta[j * w + i] - beta[l * w + i];
            }
        }
    }

    fn apply_t_add(&self, alpha: &[f64], scale: f64, out: &mut Array1<f64>) {
        let (p, w) = (self.features, self.width);
        for (r, (j, l)) in group_pairs(self.groups).into_iter().enumerate() {
            for i in 0..p {
                let a = scale * alpha[r * p + i];
                out[j * w + i] += a;
                out[l * w + i] -= a;
            }
        }
    }

    pub fn to_dense(&self) -> Result<Array2<f64>> {
        let mut f = Array2::zeros((self.rows(), self.cols()));
        let (p, w) = (self.features, self.width);
        for (r, (j, l)) in group_pairs(self.groups).into_iter().enumerate() {
            for i in 0..p {
                f[[r * p + i, j * w + i]] = 1.0;
                f[[r * p + i, l * w + i]] = -1.0;
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fusion {
    None,
    Blocks(FusionBlocks),
    Dense(Array2<f64>),
}

impl Fusion {
    fn rows(&self) -> usize {
        match self {
            Fusion::None => 0,
            Fusion::Blocks(b) => b.rows(),
            Fusion::Dense(f) => f.nrows(),
        }
    }
}

/// The scaled, stacked penalty operator and its spectral norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOperator {
    rows_fpr: Array2<f64>,
    rows_fnr: Array2<f64>,
    fusion: Fusion,
    lambda_f: f64,
    lambda_sim: f64,
    dim: usize,
    spectral_norm: f64,
}

fn check_lambda(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(JfmError::Domain(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

impl PenaltyOperator {
    fn assemble(
        d0: Array2<f64>,
        d1: Array2<f64>,
        fusion: Fusion,
        lambda_f: f64,
        lambda_sim: f64,
        dim: usize,
    ) -> Result<Self> {
        check_lambda("lambda_f", lambda_f)?;
        check_lambda("lambda_sim", lambda_sim)?;
        let fusion_cols = match &fusion {
            Fusion::None => dim,
            Fusion::Blocks(b) => b.cols(),
            Fusion::Dense(f) => f.ncols(),
        };
        if d0.ncols() != dim || d1.ncols() != dim || fusion_cols != dim {
            return Err(JfmError::Structural(format!(
                "column counts disagree: D0 {}, D1 {}, F {}, expected {dim}",
                d0.ncols(),
                d1.ncols(),
                fusion_cols
            )));
        }
        let mut op = Self {
            rows_fpr: d0,
            rows_fnr: d1,
            fusion,
            lambda_f,
            lambda_sim,
            dim,
            spectral_norm: 0.0,
        };
        op.spectral_norm = if op.rows() == 0 || (lambda_f == 0.0 && lambda_sim == 0.0) {
            0.0
        } else {
            linalg::gram_top_eigenvalue(dim, |v| op.apply_t(&op.apply(v.view()))).sqrt()
        };
        Ok(op)
    }

    /// Stacks explicit D₀, D₁ and F.
    pub fn stack(
        d0: Array2<f64>,
        d1: Array2<f64>,
        f: Array2<f64>,
        lambda_f: f64,
        lambda_sim: f64,
    ) -> Result<Self> {
        let dim = d0.ncols();
        Self::assemble(d0, d1, Fusion::Dense(f), lambda_f, lambda_sim, dim)
    }

    /// Full joint operator from class means. The block width is the width of
    /// `means`; fusion acts on its first `p` entries.
    pub fn joint(means: &ClassMeans, p: usize, lambda_f: f64, lambda_sim: f64) -> Result<Self> {
        let (d0, d1) = build_fairness_matrices(means)?;
        let fusion = FusionBlocks::new(means.groups(), p, means.width())?;
        let dim = fusion.cols();
        Self::assemble(d0, d1, Fusion::Blocks(fusion), lambda_f, lambda_sim, dim)
    }

    /// Joint operator with all fairness rows zero (used when λF = 0, where
    /// class means may be undefined).
    pub fn fusion_only(groups: usize, p: usize, width: usize, lambda_sim: f64) -> Result<Self> {
        let fusion = FusionBlocks::new(groups, p, width)?;
        let pairs = groups * (groups - 1) / 2;
        let dim = fusion.cols();
        Self::assemble(
            Array2::zeros((pairs, dim)),
            Array2::zeros((pairs, dim)),
            Fusion::Blocks(fusion),
            0.0,
            lambda_sim,
            dim,
        )
    }

    /// Fairness rows only, no fusion.
    pub fn fairness_only(d0: Array2<f64>, d1: Array2<f64>, lambda_f: f64) -> Result<Self> {
        let dim = d0.ncols();
        Self::assemble(d0, d1, Fusion::None, lambda_f, 0.0, dim)
    }

    /// The operator with no rows on a `dim`-dimensional space.
    pub fn zero(dim: usize) -> Self {
        Self {
            rows_fpr: Array2::zeros((0, dim)),
            rows_fnr: Array2::zeros((0, dim)),
            fusion: Fusion::None,
            lambda_f: 0.0,
            lambda_sim: 0.0,
            dim,
            spectral_norm: 0.0,
        }
    }

    pub fn rows_fpr(&self) -> &Array2<f64> {
        &self.rows_fpr
    }

    pub fn rows_fnr(&self) -> &Array2<f64> {
        &self.rows_fnr
    }

    pub fn rows_fusion(&self) -> Array2<f64> {
        match &self.fusion {
            Fusion::None => Array2::zeros((0, self.dim)),
            Fusion::Blocks(b) => b.to_dense().expect("validated at construction"),
            Fusion::Dense(f) => f.clone(),
        }
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn lambda_sim(&self) -> f64 {
        self.lambda_sim
    }

    /// Row count m of the stacked operator.
    pub fn rows(&self) -> usize {
        self.rows_fpr.nrows() + self.rows_fnr.nrows() + self.fusion.rows()
    }

    /// Column count (length of the coefficient vector).
    pub fn cols(&self) -> usize {
        self.dim
    }

    /// ‖stacked‖₂.
    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    /// stacked · β.
    pub fn apply(&self, beta: ArrayView1<'_, f64>) -> Array1<f64> {
        let n0 = self.rows_fpr.nrows();
        let n1 = self.rows_fnr.nrows();
        let mut out = Array1::zeros(self.rows());
        if n0 > 0 {
            let v = self.rows_fpr.dot(&beta) * self.lambda_f;
            out.slice_mut(s![..n0]).assign(&v);
        }
        if n1 > 0 {
            let v = self.rows_fnr.dot(&beta) * self.lambda_f;
            out.slice_mut(s![n0..n0 + n1]).assign(&v);
        }
        match &self.fusion {
            Fusion::None => {}
            Fusion::Blocks(b) => {
                let tail = out.as_slice_mut().expect("contiguous");
                b.apply(beta, &mut tail[n0 + n1..]);
                tail[n0 + n1..].iter_mut().for_each(|v| *v *= self.lambda_sim);
            }
            Fusion::Dense(f) => {
                let v = f.dot(&beta) * self.lambda_sim;
                out.slice_mut(s![n0 + n1..]).assign(&v);
            }
        }
        out
    }

    /// stackedᵀ · α.
    pub fn apply_t(&self, alpha: &Array1<f64>) -> Array1<f64> {
        let n0 = self.rows_fpr.nrows();
        let n1 = self.rows_fnr.nrows();
        let mut out = Array1::zeros(self.dim);
        if n0 > 0 && self.lambda_f != 0.0 {
            out.scaled_add(self.lambda_f, &self.rows_fpr.t().dot(&alpha.slice(s![..n0])));
        }
        if n1 > 0 && self.lambda_f != 0.0 {
            out.scaled_add(self.lambda_f, &self.rows_fnr.t().dot(&alpha.slice(s![n0..n0 + n1])));
        }
        match &self.fusion {
            Fusion::None => {}
            Fusion::Blocks(b) => {
                let a = alpha.as_slice().expect("contiguous");
                b.apply_t_add(&a[n0 + n1..], self.lambda_sim, &mut out);
            }
            Fusion::Dense(f) => {
                out.scaled_add(self.lambda_sim, &f.t().dot(&alpha.slice(s![n0 + n1..])));
            }
        }
        out
    }

    /// ‖stacked · β‖₁.
    pub fn l1_of(&self, beta: ArrayView1<'_, f64>) -> f64 {
        self.apply(beta).iter().map(|v| v.abs()).sum()
    }

    /// The dense `[λF·D₀; λF·D₁; λSim·F]`.
    pub fn stacked(&self) -> Array2<f64> {
        let fusion = self.rows_fusion();
        let mut out = Array2::zeros((self.rows(), self.dim));
        let n0 = self.rows_fpr.nrows();
        let n1 = self.rows_fnr.nrows();
        out.slice_mut(s![..n0, ..]).assign(&(&self.rows_fpr * self.lambda_f));
        out.slice_mut(s![n0..n0 + n1, ..]).assign(&(&self.rows_fnr * self.lambda_f));
        out.slice_mut(s![n0 + n1.., ..]).assign(&(&fusion * self.lambda_sim));
        out
    }

    /// Debug dump of the dense stacked matrix.
    pub fn write_stacked_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for row in self.stacked().rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
