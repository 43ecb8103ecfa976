//! Power iteration for spectral norms and largest Gram eigenvalues.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POWER_MAX_ITER: usize = 10_000;
pub const POWER_REL_TOL: f64 = 1e-12;

const START_SEED: u64 = 0x6a66_6d5f_7374_6172;

/// Deterministic start vector: all-ones plus a fixed pseudo-random
/// perturbation, normalized.
///
/// The pure all-ones vector lies in the null space of the fusion operator
/// (every `I, -I` block row annihilates it), so it cannot be used alone.
fn start_vector(dim: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v = Array1::from_shape_fn(dim, |_| 1.0 + 0.5 * (rng.random::<f64>() - 0.5));
    let norm = v.dot(&v).sqrt();
    v /= norm;
    v
}

/// Largest eigenvalue of the symmetric positive semidefinite map `apply_gram`
/// (typically `v -> Mᵀ M v`) on vectors of length `dim`.
///
/// Iterates until successive Rayleigh quotients agree to `POWER_REL_TOL`
/// relative, or `POWER_MAX_ITER` is reached.
pub fn gram_top_eigenvalue<F>(dim: usize, mut apply_gram: F) -> f64
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = start_vector(dim);
    let mut previous = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let w = apply_gram(&v);
        let rayleigh = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return rayleigh.max(0.0);
        }
        v = w / norm;
        if previous.is_finite() && (rayleigh - previous).abs() <= POWER_REL_TOL * rayleigh.abs() {
            return rayleigh.max(0.0);
        }
        previous = rayleigh;
    }
    previous.max(0.0)
}

/// Largest singular value of a dense matrix (0 for an all-zero matrix).
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    spectral_norm_view(m.view())
}

pub fn spectral_norm_view(m: ArrayView2<'_, f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    gram_top_eigenvalue(m.ncols(), |v| m.t().dot(&m.dot(v))).sqrt()
}

/// λ_max(Xᵀ X) for a data matrix.
pub fn gram_lambda_max(x: ArrayView2<'_, f64>) -> f64 {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0.0;
    }
    gram_top_eigenvalue(x.ncols(), |v| x.t().dot(&x.dot(v)))
}
