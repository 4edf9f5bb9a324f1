//! Spectral-norm evaluation and leading rank-r truncated SVD.
//!
//! Small matrices (min dimension <= 64) go through a dense SVD; larger ones
//! use power iteration with deflation on the Gram operator, which is all the
//! selection criterion needs. Power-iteration start vectors are seeded from
//! the matrix dimensions so results are reproducible run-to-run.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Below this min-dimension a dense SVD is cheaper and exact.
const DENSE_CUTOFF: usize = 64;
const MAX_POWER_ITERATIONS: usize = 1000;
const POWER_TOLERANCE: f64 = 1e-9;

/// Leading singular triples in standard form: nonincreasing singular values,
/// orthonormal factor columns, and a deterministic sign convention (first
/// nonzero component of each left vector is positive).
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub singular_values: Vec<f64>,
    /// m x r, orthonormal columns.
    pub left_vectors: DenseMatrix,
    /// n x r, orthonormal columns.
    pub right_vectors: DenseMatrix,
    /// False when power iteration hit its cap before reaching tolerance;
    /// the best iterate is still returned.
    pub converged: bool,
}

impl SvdTriple {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Reconstruct `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let m = self.left_vectors.rows();
        let n = self.right_vectors.rows();
        DenseMatrix::from_fn(m, n, |i, j| {
            (0..self.rank())
                .map(|k| {
                    self.singular_values[k]
                        * self.left_vectors.get(i, k)
                        * self.right_vectors.get(j, k)
                })
                .sum()
        })
    }
}

pub(crate) fn to_dmatrix(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

/// Largest singular value.
///
/// Relative accuracy ~1e-9 on the dense path; the power-iteration path stops
/// when the estimate's relative change drops below 1e-9.
pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    if m.frobenius_norm() == 0.0 {
        return 0.0;
    }
    if m.rows().min(m.cols()) <= DENSE_CUTOFF {
        let svd = to_dmatrix(m).svd(false, false);
        svd.singular_values.iter().cloned().fold(0.0, f64::max)
    } else {
        gram_spectral_norm(m)
    }
}

/// Top singular value via power iteration on the Gram matrix of the smaller
/// side: one O(n^2 min(m,n)) setup, then cheap symmetric iterations whose
/// convergence ratio is the square of the plain two-sided iteration's.
fn gram_spectral_norm(m: &DenseMatrix) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    let n = rows.min(cols);
    let data = m.as_slice();
    // Gram of the smaller side: M M^T when rows <= cols, else M^T M
    let mut gram = vec![0.0; n * n];
    if rows <= cols {
        for i in 0..n {
            let ri = &data[i * cols..(i + 1) * cols];
            for k in i..n {
                let rk = &data[k * cols..(k + 1) * cols];
                let v: f64 = ri.iter().zip(rk).map(|(a, b)| a * b).sum();
                gram[i * n + k] = v;
                gram[k * n + i] = v;
            }
        }
    } else {
        for row in data.chunks_exact(cols) {
            for a in 0..n {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let out = &mut gram[a * n..(a + 1) * n];
                for (g, rb) in out.iter_mut().zip(row) {
                    *g += ra * rb;
                }
            }
        }
    }
    let seed = dim_seed(rows, cols, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut lambda_prev = 0.0;
    for _ in 0..MAX_POWER_ITERATIONS {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = gram[i * n..(i + 1) * n]
                .iter()
                .zip(&x)
                .map(|(a, b)| a * b)
                .sum();
        }
        let lambda = normalize(&mut y);
        std::mem::swap(&mut x, &mut y);
        if (lambda - lambda_prev).abs() <= POWER_TOLERANCE * lambda.max(1e-300) {
            return lambda.sqrt();
        }
        lambda_prev = lambda;
    }
    lambda_prev.sqrt()
}

/// Best rank-r approximation factors (Eckart-Young).
pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<SvdTriple> {
    let limit = m.rows().min(m.cols());
    if r == 0 || r > limit {
        return Err(Error::RankTooLarge {
            requested: r,
            limit,
        });
    }
    if limit <= DENSE_CUTOFF {
        dense_truncated_svd(m, r)
    } else {
        deflated_power_svd(m, r)
    }
}

fn dense_truncated_svd(m: &DenseMatrix, r: usize) -> Result<SvdTriple> {
    let svd = to_dmatrix(m)
        .svd(true, true)
        ;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut triple = SvdTriple {
        singular_values: svd.singular_values.iter().take(r).cloned().collect(),
        left_vectors: DenseMatrix::from_fn(m.rows(), r, |i, k| u[(i, k)]),
        right_vectors: DenseMatrix::from_fn(m.cols(), r, |j, k| vt[(k, j)]),
        converged: true,
    };
    apply_sign_convention(&mut triple);
    Ok(triple)
}

fn deflated_power_svd(m: &DenseMatrix, r: usize) -> Result<SvdTriple> {
    let mut deflated: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(r);
    let mut all_converged = true;
    for _ in 0..r {
        let (sigma, u, v, conv) = power_iterate(m, &deflated);
        all_converged &= conv;
        deflated.push((sigma, u, v));
    }
    let mut triple = SvdTriple {
        singular_values: deflated.iter().map(|t| t.0).collect(),
        left_vectors: DenseMatrix::from_fn(m.rows(), r, |i, k| deflated[k].1[i]),
        right_vectors: DenseMatrix::from_fn(m.cols(), r, |j, k| deflated[k].2[j]),
        converged: all_converged,
    };
    apply_sign_convention(&mut triple);
    Ok(triple)
}

/// Power iteration on the deflated operator `M - sum_k sigma_k u_k v_k^T`.
/// Returns (sigma, u, v, converged).
fn power_iterate(
    m: &DenseMatrix,
    deflated: &[(f64, Vec<f64>, Vec<f64>)],
) -> (f64, Vec<f64>, Vec<f64>, bool) {
    let rows = m.rows();
    let cols = m.cols();
    let seed = dim_seed(rows, cols, deflated.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut v);

    let mut u = vec![0.0; rows];
    let mut sigma_prev = 0.0;
    let mut converged = false;
    for _ in 0..MAX_POWER_ITERATIONS {
        apply(m, deflated, &v, &mut u);
        let nu = normalize(&mut u);
        if nu == 0.0 {
            return (0.0, u, v, true);
        }
        apply_transpose(m, deflated, &u, &mut v);
        let sigma = normalize(&mut v);
        if (sigma - sigma_prev).abs() <= POWER_TOLERANCE * sigma.max(1e-300) {
            sigma_prev = sigma;
            converged = true;
            break;
        }
        sigma_prev = sigma;
    }
    (sigma_prev, u, v, converged)
}

// Start-vector seed derived from the matrix dimensions and deflation stage.
fn dim_seed(rows: usize, cols: usize, stage: usize) -> u64 {
    crate::rng::mix_seed(
        0x9e37_79b9_7f4a_7c15,
        &[rows as u64, cols as u64, stage as u64],
    )
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// `out = (M - sum sigma u v^T) x`
fn apply(m: &DenseMatrix, deflated: &[(f64, Vec<f64>, Vec<f64>)], x: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    let data = m.as_slice();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &data[i * cols..(i + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    for (sigma, u, v) in deflated {
        let vx: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
        let s = sigma * vx;
        for (o, ui) in out.iter_mut().zip(u) {
            *o -= s * ui;
        }
    }
}

/// `out = (M - sum sigma u v^T)^T x`
fn apply_transpose(
    m: &DenseMatrix,
    deflated: &[(f64, Vec<f64>, Vec<f64>)],
    x: &[f64],
    out: &mut [f64],
) {
    let cols = m.cols();
    let data = m.as_slice();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let row = &data[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += xi * a;
        }
    }
    for (sigma, u, v) in deflated {
        let ux: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
        let s = sigma * ux;
        for (o, vi) in out.iter_mut().zip(v) {
            *o -= s * vi;
        }
    }
}

fn apply_sign_convention(t: &mut SvdTriple) {
    for k in 0..t.rank() {
        let mut flip = false;
        for i in 0..t.left_vectors.rows() {
            let v = t.left_vectors.get(i, k);
            if v.abs() > 1e-12 {
                flip = v < 0.0;
                break;
            }
        }
        if flip {
            for i in 0..t.left_vectors.rows() {
                t.left_vectors.set(i, k, -t.left_vectors.get(i, k));
            }
            for j in 0..t.right_vectors.rows() {
                t.right_vectors.set(j, k, -t.right_vectors.get(j, k));
            }
        }
    }
}
