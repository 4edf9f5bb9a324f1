//! Rank-r completion of the rearranged matrix: spectral initialization
//! followed by alternating masked least squares, with renormalization to
//! standard SVD form after every sweep.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    kron_add_into, project, rearrange, rearrange_mask, unvec, Configuration, DenseMatrix,
    ObservationMask,
};
use crate::spectral::{truncated_svd, SvdTriple};

/// Fitted Kronecker factorization `sum_i lambda_i A_i (x) B_i` at a fixed
/// configuration. Factors have unit Frobenius norm; `lambdas` are
/// nonincreasing and nonnegative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KroneckerModel {
    pub config: Configuration,
    pub krank: usize,
    pub lambdas: Vec<f64>,
    pub a_factors: Vec<DenseMatrix>,
    pub b_factors: Vec<DenseMatrix>,
}

/// Iteration control for the alternating least-squares loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergencePolicy {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Fail with `Diverged` when the masked residual exceeds this multiple
    /// of the initial residual.
    pub divergence_cap: f64,
    /// Opt-in Tikhonov damping (1e-10) for singular normal-equation blocks
    /// instead of failing fast with `UnderdeterminedRow`.
    pub ridge: bool,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-8,
            divergence_cap: 1e6,
            ridge: false,
        }
    }
}

const SINGULARITY_TOLERANCE: f64 = 1e-12;
const RIDGE_DAMPING: f64 = 1e-10;

/// Which factor the masked least-squares step solves for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Rank-r SVD of the zero-filled rearranged matrix with singular values
/// rescaled by `1/tau_hat`, `tau_hat` the empirical observed fraction.
pub fn spectral_init(
    y_rearranged: &DenseMatrix,
    mask: &ObservationMask,
    r: usize,
) -> Result<SvdTriple> {
    check_recoverable(mask)?;
    let tau_hat = mask.len() as f64 / (mask.rows() * mask.cols()) as f64;
    let mut triple = truncated_svd(y_rearranged, r)?;
    for s in triple.singular_values.iter_mut() {
        *s /= tau_hat;
    }
    Ok(triple)
}

fn check_recoverable(mask: &ObservationMask) -> Result<()> {
    let mut row_seen = vec![false; mask.rows()];
    let mut col_seen = vec![false; mask.cols()];
    for (i, j) in mask.indices() {
        row_seen[i] = true;
        col_seen[j] = true;
    }
    let empty_rows: Vec<usize> = (0..mask.rows()).filter(|&i| !row_seen[i]).collect();
    let empty_cols: Vec<usize> = (0..mask.cols()).filter(|&j| !col_seen[j]).collect();
    if empty_rows.is_empty() && empty_cols.is_empty() {
        Ok(())
    } else {
        Err(Error::Irrecoverable {
            empty_rows,
            empty_cols,
        })
    }
}

/// One half-step of ALS: solve the masked least-squares problem for the
/// free factor, row by row (`Side::Left`) or column by column
/// (`Side::Right`), holding `fixed` constant.
pub fn masked_ls_update(
    y: &DenseMatrix,
    mask: &ObservationMask,
    fixed: &DenseMatrix,
    side: Side,
    ridge: bool,
) -> Result<DenseMatrix> {
    let r = fixed.cols();
    let (solve_dim, other_dim) = match side {
        Side::Left => (y.rows(), y.cols()),
        Side::Right => (y.cols(), y.rows()),
    };
    if fixed.rows() != other_dim {
        return Err(Error::DimensionMismatch(format!(
            "fixed factor has {} rows, expected {other_dim}",
            fixed.rows()
        )));
    }
    let mut out = DenseMatrix::zeros(solve_dim, r);
    let mut gram = DMatrix::<f64>::zeros(r, r);
    let mut rhs = DMatrix::<f64>::zeros(r, 1);
    for idx in 0..solve_dim {
        gram.fill(0.0);
        rhs.fill(0.0);
        let mut observed = 0usize;
        for other in 0..other_dim {
            let (i, j) = match side {
                Side::Left => (idx, other),
                Side::Right => (other, idx),
            };
            if !mask.is_observed(i, j) {
                continue;
            }
            observed += 1;
            let yij = y.get(i, j);
            for a in 0..r {
                let fa = fixed.get(other, a);
                rhs[(a, 0)] += yij * fa;
                for b in a..r {
                    gram[(a, b)] += fa * fixed.get(other, b);
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let solution = solve_normal_block(&gram, &rhs, ridge).ok_or(
            Error::UnderdeterminedRow {
                index: idx,
                observed,
            },
        )?;
        for a in 0..r {
            out.set(idx, a, solution[(a, 0)]);
        }
    }
    Ok(out)
}

fn solve_normal_block(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    ridge: bool,
) -> Option<DMatrix<f64>> {
    let r = gram.nrows();
    let max_diag = (0..r).map(|a| gram[(a, a)]).fold(0.0_f64, f64::max);
    let chol = nalgebra::Cholesky::new(gram.clone());
    if let Some(chol) = chol {
        // reject ill-conditioned blocks: a tiny Cholesky pivot means the
        // normal equations are singular to working tolerance
        let l = chol.l();
        let min_pivot = (0..r).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if max_diag > 0.0 && min_pivot > SINGULARITY_TOLERANCE * max_diag {
            return Some(chol.solve(rhs));
        }
    }
    if ridge {
        let mut damped = gram.clone();
        let scale = max_diag.max(1.0);
        for a in 0..r {
            damped[(a, a)] += RIDGE_DAMPING * scale;
        }
        return nalgebra::Cholesky::new(damped).map(|c| c.solve(rhs));
    }
    None
}

fn masked_residual(y: &DenseMatrix, mask: &ObservationMask, u: &DenseMatrix, v: &DenseMatrix) -> f64 {
    let r = u.cols();
    let mut total = 0.0;
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            if !mask.is_observed(i, j) {
                continue;
            }
            let mut fit = 0.0;
            for k in 0..r {
                fit += u.get(i, k) * v.get(j, k);
            }
            let d = y.get(i, j) - fit;
            total += d * d;
        }
    }
    total.sqrt()
}

/// Bring `U V^T` into standard SVD form via thin QR of both factors and a
/// small r x r SVD. Returns orthonormal `(U, lambdas, V)`.
fn renormalize(u: &DenseMatrix, v: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let r = u.cols();
    let qu = crate::spectral::to_dmatrix(u).qr();
    let qv = crate::spectral::to_dmatrix(v).qr();
    let small = qu.r() * qv.r().transpose();
    let svd = small.svd(true, true);
    let us = svd.u.unwrap();
    let vts = svd.v_t.unwrap();
    let qum = qu.q();
    let qvm = qv.q();
    let new_u = &qum * &us;
    let new_v = &qvm * vts.transpose();
    let mut u_out = DenseMatrix::from_fn(u.rows(), r, |i, k| new_u[(i, k)]);
    let mut v_out = DenseMatrix::from_fn(v.rows(), r, |j, k| new_v[(j, k)]);
    // deterministic sign convention
    for k in 0..r {
        let mut flip = false;
        for i in 0..u_out.rows() {
            let x = u_out.get(i, k);
            if x.abs() > 1e-12 {
                flip = x < 0.0;
                break;
            }
        }
        if flip {
            for i in 0..u_out.rows() {
                u_out.set(i, k, -u_out.get(i, k));
            }
            for j in 0..v_out.rows() {
                v_out.set(j, k, -v_out.get(j, k));
            }
        }
    }
    let lambdas: Vec<f64> = svd.singular_values.iter().cloned().collect();
    (u_out, lambdas, v_out)
}

fn scaled(u: &DenseMatrix, lambdas: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(u.rows(), u.cols(), |i, k| u.get(i, k) * lambdas[k])
}

/// Complete `Y` under configuration `c` at K-rank `r`.
///
/// Rearranges the observations, runs spectral-init + ALS, and maps the
/// fitted rank-r factorization back to the original space. The masked
/// residual is nonincreasing across iterations; the loop stops when its
/// relative change drops below the policy tolerance.
pub fn complete(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    c: &Configuration,
    r: usize,
    policy: &ConvergencePolicy,
) -> Result<(KroneckerModel, DenseMatrix)> {
    let (rr, rc) = c.rearranged_shape();
    let limit = rr.min(rc);
    if r == 0 || r > limit {
        return Err(Error::RankTooLarge {
            requested: r,
            limit,
        });
    }
    let y_obs = project(y_obs, mask)?;
    let y_r = rearrange(&y_obs, c)?;
    let mask_r = rearrange_mask(mask, c)?;
    let init = spectral_init(&y_r, &mask_r, r)?;

    let mut u = init.left_vectors.clone();
    let mut lambdas = init.singular_values.clone();
    let mut v = init.right_vectors.clone();

    let observed_norm = masked_residual(&y_r, &mask_r, &DenseMatrix::zeros(rr, r), &v);
    let mut resid = masked_residual(&y_r, &mask_r, &scaled(&u, &lambdas), &v);
    let resid0 = resid.max(f64::MIN_POSITIVE);
    let absolute_floor = 1e-14 * observed_norm;

    for _ in 0..policy.max_iterations {
        let u_star = masked_ls_update(&y_r, &mask_r, &v, Side::Left, policy.ridge)?;
        let v_star = masked_ls_update(&y_r, &mask_r, &u_star, Side::Right, policy.ridge)?;
        let (nu, nl, nv) = renormalize(&u_star, &v_star);
        u = nu;
        lambdas = nl;
        v = nv;
        let new_resid = masked_residual(&y_r, &mask_r, &scaled(&u, &lambdas), &v);
        if new_resid > policy.divergence_cap * resid0 {
            return Err(Error::Diverged {
                residual: new_resid,
                cap: policy.divergence_cap * resid0,
            });
        }
        let change = (resid - new_resid).abs();
        resid = new_resid;
        if resid <= absolute_floor || change <= policy.relative_tolerance * resid.max(1e-300) {
            break;
        }
    }

    let (p, q) = (c.p(), c.q());
    let (ps, qs) = (c.p_star(), c.q_star());
    let mut a_factors = Vec::with_capacity(r);
    let mut b_factors = Vec::with_capacity(r);
    for k in 0..r {
        let uk: Vec<f64> = (0..rr).map(|i| u.get(i, k)).collect();
        let vk: Vec<f64> = (0..rc).map(|j| v.get(j, k)).collect();
        a_factors.push(unvec(&uk, p, q)?);
        b_factors.push(unvec(&vk, ps, qs)?);
    }
    let model = KroneckerModel {
        config: *c,
        krank: r,
        lambdas,
        a_factors,
        b_factors,
    };
    let x_hat = reconstruct(&model);
    Ok((model, x_hat))
}

/// `sum_i lambda_i A_i (x) B_i`.
pub fn reconstruct(model: &KroneckerModel) -> DenseMatrix {
    let (big_p, big_q) = model.config.ambient();
    let mut out = DenseMatrix::zeros(big_p, big_q);
    for k in 0..model.krank {
        kron_add_into(
            &mut out,
            model.lambdas[k],
            &model.a_factors[k],
            &model.b_factors[k],
        );
    }
    out
}
