//! Independent reference implementations used to check the library.
//! Nothing here calls into jfm_core's numerics.

#![allow(dead_code)]

use jfm_core::{GroupData, GroupedDesign};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
}

/// K groups with standard normal features and logistic labels from a
/// random coefficient vector per group; every group gets both classes.
pub fn random_design(seed: u64, p: usize, sizes: &[usize]) -> GroupedDesign {
    let mut r = rng(seed);
    let groups = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let x = normal_matrix(&mut r, n, p);
            let beta = normal_vector(&mut r, p) * 0.8;
            let eta = x.dot(&beta);
            let mut y: Array1<f64> = eta.mapv(|e| if r.random::<f64>() < 1.0 / (1.0 + (-e).exp()) { 1.0 } else { 0.0 });
            y[0] = 0.0;
            y[1] = 1.0;
            GroupData { id: format!("g{}", k + 1), x, y }
        })
        .collect();
    GroupedDesign::new(groups, (0..p).map(|j| format!("f{j}")).collect()).unwrap()
}

/// X with a trailing column of ones.
pub fn with_ones(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[[i, j]] * a[[i, j]];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

pub fn max_eigenvalue(a: &Array2<f64>) -> f64 {
    jacobi_eigenvalues(a).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Singular values by one-sided (Hestenes) Jacobi orthogonalization.
pub fn jacobi_singular_values(m: &Array2<f64>) -> Vec<f64> {
    let mut u = m.clone();
    let n = u.ncols();
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..u.nrows() {
                    alpha += u[[r, i]] * u[[r, i]];
                    beta += u[[r, j]] * u[[r, j]];
                    gamma += u[[r, i]] * u[[r, j]];
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..u.nrows() {
                    let a = u[[r, i]];
                    let b = u[[r, j]];
                    u[[r, i]] = c * a - s * b;
                    u[[r, j]] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n).map(|j| u.column(j).dot(&u.column(j)).sqrt()).collect()
}

pub fn max_singular_value(m: &Array2<f64>) -> f64 {
    jacobi_singular_values(m).into_iter().fold(0.0, f64::max)
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One loss term: weight · Σ [log(1+e^{xβ}) − y·xβ] over a slice of β.
pub struct Block {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub weight: f64,
    pub offset: usize,
}

pub fn blocks_loss(blocks: &[Block], beta: &Array1<f64>) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let c = beta.slice(ndarray::s![b.offset..b.offset + b.x.ncols()]);
            let eta = b.x.dot(&c);
            b.weight * eta.iter().zip(b.y.iter()).map(|(&e, &y)| log1pexp(e) - y * e).sum::<f64>()
        })
        .sum()
}

pub fn blocks_grad(blocks: &[Block], beta: &Array1<f64>) -> Array1<f64> {
    let mut g = Array1::zeros(beta.len());
    for b in blocks {
        let c = beta.slice(ndarray::s![b.offset..b.offset + b.x.ncols()]);
        let eta = b.x.dot(&c);
        let r: Array1<f64> = eta.iter().zip(b.y.iter()).map(|(&e, &y)| logistic(e) - y).collect();
        let gb = b.x.t().dot(&r) * b.weight;
        let mut slot = g.slice_mut(ndarray::s![b.offset..b.offset + b.x.ncols()]);
        slot += &gb;
    }
    g
}

/// Plain ISTA with step 1/L (L from the Jacobi eigen oracle) on
/// loss + Σ t_j|β_j|, run until the iterate change is below `tol`.
/// Returns (β, objective).
pub fn ista(blocks: &[Block], l1: &Array1<f64>, tol: f64) -> (Array1<f64>, f64) {
    let dim = l1.len();
    let mut gram = Array2::<f64>::zeros((dim, dim));
    for b in blocks {
        let w = b.x.ncols();
        let g = b.x.t().dot(&b.x) * b.weight;
        let mut slot = gram.slice_mut(ndarray::s![b.offset..b.offset + w, b.offset..b.offset + w]);
        slot += &g;
    }
    let lip = 0.25 * max_eigenvalue(&gram);
    let mut beta = Array1::<f64>::zeros(dim);
    for _ in 0..5_000_000 {
        let g = blocks_grad(blocks, &beta);
        let next: Array1<f64> = beta
            .iter()
            .zip(g.iter())
            .zip(l1.iter())
            .map(|((&b, &gi), &t)| {
                let v = b - gi / lip;
                v.signum() * (v.abs() - t / lip).max(0.0)
            })
            .collect();
        let change = (&next - &beta).mapv(|d| d * d).sum().sqrt();
        beta = next;
        if change < tol {
            break;
        }
    }
    let obj = blocks_loss(blocks, &beta) + beta.iter().zip(l1.iter()).map(|(b, t)| t * b.abs()).sum::<f64>();
    (beta, obj)
}

fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs())).unwrap();
        for k in 0..n {
            a.swap([col, k], [piv, k]);
        }
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[[row, k]] * x[k]).sum();
        x[row] = (b[row] - s) / a[[row, row]];
    }
    x
}

/// Unpenalized logistic MLE by damped Newton with backtracking.
pub fn newton_logistic(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let p = x.ncols();
    let block = [Block { x: x.clone(), y: y.clone(), weight: 1.0, offset: 0 }];
    let mut beta = Array1::<f64>::zeros(p);
    for _ in 0..200 {
        let g = blocks_grad(&block, &beta);
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
        let eta = x.dot(&beta);
        let mut h = Array2::<f64>::zeros((p, p));
        for (i, row) in x.rows().into_iter().enumerate() {
            let pi = logistic(eta[i]);
            let w = pi * (1.0 - pi);
            for a in 0..p {
                for b in 0..p {
                    h[[a, b]] += w * row[a] * row[b];
                }
            }
        }
        let step = solve(h, g.clone());
        let f0 = blocks_loss(&block, &beta);
        let mut t = 1.0;
        loop {
            let cand = &beta - &(&step * t);
            if blocks_loss(&block, &cand) <= f0 - 1e-4 * t * g.dot(&step) || t < 1e-12 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    beta
}

/// Central differences of `f` at `x`.
pub fn finite_diff<F: Fn(&Array1<f64>) -> f64>(f: F, x: &Array1<f64>, h: f64) -> Array1<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// sup over α ∈ [−1, 1] of α·d − (μ/2)α², by a dense grid refined twice.
pub fn grid_sup(d: f64, mu: f64) -> f64 {
    let obj = |a: f64| a * d - 0.5 * mu * a * a;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..4 {
        let n = 2001;
        let mut arg = lo;
        for i in 0..n {
            let a = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = obj(a);
            if v > best {
                best = v;
                arg = a;
            }
        }
        let w = (hi - lo) / (n - 1) as f64;
        lo = (arg - w).max(-1.0);
        hi = (arg + w).min(1.0);
    }
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
