//! Synthetic-data generators, structural diagnostics (incoherence,
//! representation gap), error metrics, and the two experiment drivers:
//! the configuration-selection sweep and the aggregation study.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{Aggregator, FallbackMode};
use crate::als::ConvergencePolicy;
use crate::config_select::rank_configurations;
use crate::error::{Error, Result};
use crate::matrix::{
    candidate_set, kron_add_into, kronecker_product, project, rearrange, CandidateMode,
    Configuration, ConfigurationSet, DenseMatrix, ObservationMask,
};
use crate::rng::{mix_seed, stream_rng};
use crate::spectral::spectral_norm;

/// Parameters of one synthetic experiment. Factor shapes are stored as
/// base-2 logarithms: a term `(m, n)` denotes a `2^m x 2^n` left factor
/// inside a `2^M x 2^N` ambient matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// log2 of the ambient row dimension.
    pub big_m: u32,
    /// log2 of the ambient column dimension.
    pub big_n: u32,
    /// Mixture terms as log2 configurations `(m_i, n_i)`.
    pub terms: Vec<(u32, u32)>,
    /// Gap parameter `phi^2`, strictly inside (0, 1).
    pub gap: f64,
    /// Signal scale multiplying the mixture.
    pub lambda: f64,
    /// Noise scale: `Y = X + sigma / sqrt(PQ) * E`.
    pub sigma: f64,
    /// Bernoulli observation probability, in (0, 1].
    pub observing_rate: f64,
    /// K-rank used when fitting each configuration.
    pub krank_fit: usize,
    pub candidate: CandidateMode,
    pub seed: u64,
    pub replicates: usize,
}

impl ScenarioSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        big_m: u32,
        big_n: u32,
        terms: Vec<(u32, u32)>,
        gap: f64,
        lambda: f64,
        sigma: f64,
        observing_rate: f64,
        krank_fit: usize,
        candidate: CandidateMode,
        seed: u64,
        replicates: usize,
    ) -> Result<Self> {
        if !(gap > 0.0 && gap < 1.0) {
            return Err(Error::InvalidGap(gap));
        }
        if !(observing_rate > 0.0 && observing_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "observing rate {observing_rate} outside (0, 1]"
            )));
        }
        for &(m, n) in &terms {
            // the mixture construction halves the left factor's columns and
            // the right factor's rows, so both splits must be nontrivial
            if n < 1 || m + 1 > big_m || n > big_n {
                return Err(Error::ConfigOutOfRange(m, n, big_m, big_n));
            }
        }
        Ok(Self {
            big_m,
            big_n,
            terms,
            gap,
            lambda,
            sigma,
            observing_rate,
            krank_fit,
            candidate,
            seed,
            replicates,
        })
    }

    pub fn snr(&self) -> f64 {
        self.lambda / self.sigma
    }

    pub fn ambient(&self) -> (usize, usize) {
        (1usize << self.big_m, 1usize << self.big_n)
    }

    fn benchmark_scenario(
        terms: Vec<(u32, u32)>,
        gap: f64,
        seed: u64,
        replicates: usize,
    ) -> Self {
        // shared design of the aggregation scenarios: 512 x 512 ambient,
        // sigma = 2, observing rate 0.2, candidate set with s = 7
        ScenarioSpec::new(
            9,
            9,
            terms,
            gap,
            1.0,
            2.0,
            0.2,
            1,
            CandidateMode::S(7),
            seed,
            replicates,
        )
        .expect("benchmark scenario parameters are valid")
    }

    /// One-term mixture, large gap.
    pub fn l1(seed: u64, replicates: usize) -> Self {
        Self::benchmark_scenario(vec![(5, 4)], 0.5, seed, replicates)
    }

    /// One-term mixture, small gap.
    pub fn s1(seed: u64, replicates: usize) -> Self {
        Self::benchmark_scenario(vec![(5, 4)], 0.05, seed, replicates)
    }

    /// Two-term mixture, large gap.
    pub fn l2(seed: u64, replicates: usize) -> Self {
        Self::benchmark_scenario(vec![(5, 4), (4, 5)], 0.5, seed, replicates)
    }

    /// Two-term mixture, small gap.
    pub fn s2(seed: u64, replicates: usize) -> Self {
        Self::benchmark_scenario(vec![(5, 4), (4, 5)], 0.05, seed, replicates)
    }
}

/// Two random matrices with unit Frobenius norm and zero mutual inner
/// product: Gaussian draws, Gram-Schmidt on the second, then normalization.
fn orthonormal_pair(
    rows: usize,
    cols: usize,
    rng: &mut impl rand::Rng,
) -> (DenseMatrix, DenseMatrix) {
    use rand_distr::{Distribution, StandardNormal};
    let mut draw = || {
        DenseMatrix::from_fn(rows, cols, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        })
    };
    let d1 = draw();
    let g2 = draw();
    let dot: f64 = d1
        .as_slice()
        .iter()
        .zip(g2.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let n1 = d1.frobenius_norm();
    let d2 = g2.sub(&d1.scale(dot / (n1 * n1))).expect("same shape");
    (d1.scale(1.0 / n1), d2.scale(1.0 / d2.frobenius_norm()))
}

/// K-rank-1 factor pair with a controlled representation gap.
///
/// `A = (sqrt(1-phi^2), 0)^T (x) D1 + (0, phi)^T (x) D2` with unit-norm,
/// mutually orthogonal `D1, D2` of shape `2^(m0-1) x 2^n0`; `B` analogously
/// from `D3, D4` of shape `2^(M-m0-1) x 2^(N-n0)`. Both factors have unit
/// Frobenius norm.
pub fn gen_krank1_pair(
    m0: u32,
    n0: u32,
    big_m: u32,
    big_n: u32,
    gap: f64,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::InvalidGap(gap));
    }
    if m0 < 1 || m0 + 1 > big_m || n0 > big_n {
        return Err(Error::ConfigOutOfRange(m0, n0, big_m, big_n));
    }
    let mut rng = stream_rng(seed, &[0x6b, m0 as u64, n0 as u64, big_m as u64, big_n as u64]);
    let c = gap.sqrt();
    let s = (1.0 - gap).sqrt();
    let build = |rows_half: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let (d_top, d_bot) = orthonormal_pair(rows_half, cols, rng);
        DenseMatrix::from_fn(2 * rows_half, cols, |i, j| {
            if i < rows_half {
                s * d_top.get(i, j)
            } else {
                c * d_bot.get(i - rows_half, j)
            }
        })
    };
    let a = build(1 << (m0 - 1), 1 << n0, &mut rng);
    let b = build(1 << (big_m - m0 - 1), 1 << (big_n - n0), &mut rng);
    Ok((a, b))
}

/// Signal matrix `X = lambda * sum_i A_i (x) B_i` for one replicate of the
/// mixture construction: each left factor splits its columns between two
/// orthogonal directions, each right factor its rows, so that every term
/// has unit Frobenius norm and gap roughly `phi^2`.
pub fn gen_mixture(spec: &ScenarioSpec, replicate: u64) -> Result<DenseMatrix> {
    let (big_p, big_q) = spec.ambient();
    let mut x = DenseMatrix::zeros(big_p, big_q);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let row_plus = DenseMatrix::new(1, 2, vec![inv_sqrt2, inv_sqrt2])?;
    let row_minus = DenseMatrix::new(1, 2, vec![inv_sqrt2, -inv_sqrt2])?;
    let col_plus = row_plus.transpose();
    let col_minus = row_minus.transpose();
    let c = spec.gap.sqrt();
    let s = (1.0 - spec.gap).sqrt();
    for (idx, &(m, n)) in spec.terms.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, &[0x6d, replicate, idx as u64]);
        let (d1, d2) = orthonormal_pair(1 << m, 1 << (n - 1), &mut rng);
        let (d3, d4) = orthonormal_pair(
            1 << (spec.big_m - m - 1),
            1 << (spec.big_n - n),
            &mut rng,
        );
        let a = kronecker_product(&d1, &row_plus)
            .scale(c)
            .add(&kronecker_product(&d2, &row_minus).scale(s))?;
        let b = kronecker_product(&col_plus, &d3)
            .scale(c)
            .add(&kronecker_product(&col_minus, &d4).scale(s))?;
        kron_add_into(&mut x, spec.lambda, &a, &b);
    }
    Ok(x)
}

/// Add scaled Gaussian noise and draw a Bernoulli observation mask:
/// `Y = X + sigma / sqrt(PQ) * E`, `P[(i,j) observed] = tau`. Returns the
/// observed projection and the mask; deterministic given the seed.
pub fn corrupt_and_mask(
    x: &DenseMatrix,
    sigma: f64,
    tau: f64,
    seed: u64,
) -> Result<(DenseMatrix, ObservationMask)> {
    use rand_distr::{Distribution, StandardNormal};
    let (rows, cols) = (x.rows(), x.cols());
    let scale = sigma / ((rows * cols) as f64).sqrt();
    let mut noise_rng = stream_rng(seed, &[0xe0]);
    let y = DenseMatrix::from_fn(rows, cols, |i, j| {
        let e: f64 = StandardNormal.sample(&mut noise_rng);
        x.get(i, j) + scale * e
    });
    let mut mask_rng = stream_rng(seed, &[0xe1]);
    let mut mask = ObservationMask::empty(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if mask_rng.gen::<f64>() < tau {
                mask.insert(i, j);
            }
        }
    }
    Ok((project(&y, &mask)?, mask))
}

/// Incoherence coefficient `sqrt(mn) * max|M_ij| / ||M||_F`, always >= 1.
pub fn incoherence_coefficient(m: &DenseMatrix) -> Result<f64> {
    let f = m.frobenius_norm();
    if f == 0.0 {
        return Err(Error::InvalidArgument(
            "incoherence undefined for the zero matrix".into(),
        ));
    }
    Ok(((m.rows() * m.cols()) as f64).sqrt() * m.max_abs() / f)
}

/// `(phi, psi^2)`: `phi` is the largest rearranged spectral norm of the
/// normalized signal over configurations other than the true one, and
/// `psi^2 = 1 - phi^2` is the representation gap. If `true_c` is absent
/// from the set, the whole set is scanned.
pub fn representation_gap(
    x: &DenseMatrix,
    true_c: &Configuration,
    set: &ConfigurationSet,
) -> Result<(f64, f64)> {
    let f = x.frobenius_norm();
    if f == 0.0 {
        return Err(Error::InvalidArgument(
            "representation gap undefined for the zero matrix".into(),
        ));
    }
    let xn = x.scale(1.0 / f);
    let phi = set
        .members()
        .par_iter()
        .filter(|c| *c != true_c)
        .map(|c| rearrange(&xn, c).map(|r| spectral_norm(&r)))
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    let phi = phi.min(1.0);
    Ok((phi, 1.0 - phi * phi))
}

/// Mean squared entrywise error, optionally restricted to a region.
pub fn mse(xhat: &DenseMatrix, x: &DenseMatrix, region: Option<&[(usize, usize)]>) -> Result<f64> {
    if xhat.rows() != x.rows() || xhat.cols() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            xhat.rows(),
            xhat.cols(),
            x.rows(),
            x.cols()
        )));
    }
    match region {
        None => {
            let d = xhat.sub(x)?.frobenius_norm();
            Ok(d * d / (x.rows() * x.cols()) as f64)
        }
        Some(idx) => {
            if idx.is_empty() {
                return Err(Error::InvalidArgument("empty region".into()));
            }
            let mut total = 0.0;
            for &(i, j) in idx {
                if i >= x.rows() || j >= x.cols() {
                    return Err(Error::OutOfBounds(i, j, x.rows(), x.cols()));
                }
                let d = xhat.get(i, j) - x.get(i, j);
                total += d * d;
            }
            Ok(total / idx.len() as f64)
        }
    }
}

/// Relative squared error `||X - Xhat||_F^2 / ||X||_F^2`.
pub fn reconstruction_error(xhat: &DenseMatrix, x: &DenseMatrix) -> Result<f64> {
    let f = x.frobenius_norm();
    if f == 0.0 {
        return Err(Error::InvalidArgument(
            "reconstruction error undefined for zero reference".into(),
        ));
    }
    let d = x.sub(xhat)?.frobenius_norm();
    Ok(d * d / (f * f))
}

/// Grid for the configuration-selection sweep: one correct-selection
/// frequency per (snr, tau, gap, candidate mode) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub m0: u32,
    pub n0: u32,
    pub big_m: u32,
    pub big_n: u32,
    pub snrs: Vec<f64>,
    pub taus: Vec<f64>,
    pub gaps: Vec<f64>,
    pub modes: Vec<CandidateMode>,
    pub replicates: usize,
    pub seed: u64,
    /// Stop scanning a (tau, gap, mode) combination at the first snr whose
    /// frequency exceeds 1/2 (enough to locate gamma*).
    pub early_stop_gamma: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub snr: f64,
    pub tau: f64,
    pub gap: f64,
    pub mode: CandidateMode,
    /// Fraction of replicates selecting the true configuration.
    pub frequency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaStar {
    pub tau: f64,
    pub gap: f64,
    pub mode: CandidateMode,
    /// Smallest swept snr with frequency above 1/2; None if never reached.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
    pub gamma_star: Vec<GammaStar>,
}

/// Correct-selection frequency across the grid, plus the selection
/// threshold `gamma*` per (tau, gap, candidate-mode) combination.
pub fn run_selection_sweep(grid: &SweepGrid) -> Result<SweepReport> {
    let (big_p, big_q) = (1usize << grid.big_m, 1usize << grid.big_n);
    let truth = Configuration::new(1 << grid.m0, 1 << grid.n0, big_p, big_q)?;
    let mut cells = Vec::new();
    let mut gamma_star = Vec::new();
    for (mode_idx, mode) in grid.modes.iter().enumerate() {
        let set = candidate_set(big_p, big_q, *mode)?;
        for (tau_idx, &tau) in grid.taus.iter().enumerate() {
            for (gap_idx, &gap) in grid.gaps.iter().enumerate() {
                let mut gamma = None;
                for (snr_idx, &snr) in grid.snrs.iter().enumerate() {
                    let cell_seed = mix_seed(
                        grid.seed,
                        &[mode_idx as u64, tau_idx as u64, gap_idx as u64, snr_idx as u64],
                    );
                    let hits: usize = (0..grid.replicates)
                        .into_par_iter()
                        .map(|rep| -> Result<usize> {
                            let rep_seed = mix_seed(cell_seed, &[rep as u64]);
                            let (a, b) = gen_krank1_pair(
                                grid.m0, grid.n0, grid.big_m, grid.big_n, gap, rep_seed,
                            )?;
                            let mut x = DenseMatrix::zeros(big_p, big_q);
                            // sigma = 1, so lambda equals the target snr
                            kron_add_into(&mut x, snr, &a, &b);
                            let (y_obs, mask) = corrupt_and_mask(&x, 1.0, tau, rep_seed)?;
                            let ranking = rank_configurations(&y_obs, &mask, &set)?;
                            let best = ranking.best().expect("nonempty candidate set").config;
                            Ok(usize::from(best == truth))
                        })
                        .try_reduce(|| 0, |a, b| Ok(a + b))?;
                    let frequency = hits as f64 / grid.replicates as f64;
                    cells.push(SweepCell {
                        snr,
                        tau,
                        gap,
                        mode: *mode,
                        frequency,
                    });
                    if gamma.is_none() && frequency > 0.5 {
                        gamma = Some(snr);
                        if grid.early_stop_gamma {
                            break;
                        }
                    }
                }
                gamma_star.push(GammaStar {
                    tau,
                    gap,
                    mode: *mode,
                    gamma,
                });
            }
        }
    }
    Ok(SweepReport {
        grid: grid.clone(),
        cells,
        gamma_star,
    })
}

/// Per-replicate outcome of the aggregation study. Vectors are indexed by
/// `d - 1`, the number of aggregated configurations minus one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    /// Ranked configurations as `(p, q)` pairs, best first.
    pub top_configs: Vec<(usize, usize)>,
    /// Overall MSE per d, for each fitted K-rank (index 0 = rank 1).
    pub mse_by_rank: Vec<Vec<f64>>,
    /// Region-restricted MSE per d, present when a block was forced missing.
    pub region_mse_by_rank: Option<Vec<Vec<f64>>>,
    /// Mean-fill benchmark MSE over the forced block.
    pub benchmark_region_mse: Option<f64>,
    /// CV-MSE per d at the first fitted K-rank, when requested.
    pub cv_curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationStudyReport {
    pub spec: ScenarioSpec,
    pub d_max: usize,
    pub fit_ranks: Vec<usize>,
    pub forced_block: Option<(usize, usize)>,
    pub replicates: Vec<ReplicateOutcome>,
    /// Mean over replicates of the overall MSE, per rank then per d.
    pub mean_mse_by_rank: Vec<Vec<f64>>,
    /// Median over replicates of the region MSE, per rank then per d.
    pub median_region_mse_by_rank: Option<Vec<Vec<f64>>>,
    pub median_benchmark_region_mse: Option<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregation study: MSE (and optionally CV-MSE) against the number of
/// aggregated configurations, for K-rank-1 and K-rank-2 fits. With a
/// forced missing block the estimator never reaches below rank `d`
/// (benchmark mean-fill covers still-infeasible entries), and the report
/// adds region-restricted MSEs summarized by medians.
pub fn run_aggregation_study(
    spec: &ScenarioSpec,
    d_max: usize,
    forced_block: Option<(usize, usize)>,
    with_cv: bool,
) -> Result<AggregationStudyReport> {
    let (big_p, big_q) = spec.ambient();
    let set = candidate_set(big_p, big_q, spec.candidate)?;
    let d_max = d_max.min(set.len());
    let fit_ranks = vec![1usize, 2];
    let fallback = if forced_block.is_some() {
        FallbackMode::TruncateAtD
    } else {
        FallbackMode::ExtendToFeasible
    };
    let region: Option<Vec<(usize, usize)>> = forced_block.map(|(br, bc)| {
        (0..br).flat_map(|i| (0..bc).map(move |j| (i, j))).collect()
    });
    let policy = ConvergencePolicy::default();
    let weights = vec![1.0; set.len()];

    let replicates: Vec<ReplicateOutcome> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| -> Result<ReplicateOutcome> {
            let x = gen_mixture(spec, rep as u64)?;
            let rep_seed = mix_seed(spec.seed, &[0xa9, rep as u64]);
            let (y_obs, mut mask) =
                corrupt_and_mask(&x, spec.sigma, spec.observing_rate, rep_seed)?;
            if let Some((br, bc)) = forced_block {
                for i in 0..br {
                    for j in 0..bc {
                        mask.remove(i, j);
                    }
                }
            }
            let y_obs = project(&y_obs, &mask)?;
            let ranking = rank_configurations(&y_obs, &mask, &set)?;
            let top_configs = ranking
                .scores()
                .iter()
                .map(|s| (s.config.p(), s.config.q()))
                .collect();
            let mut mse_by_rank = Vec::new();
            let mut region_mse_by_rank = forced_block.map(|_| Vec::new());
            for &r in &fit_ranks {
                let mut agg = Aggregator::new(&y_obs, &mask, &ranking, r, &policy, fallback)?;
                let mut mses = Vec::with_capacity(d_max);
                let mut region_mses = Vec::with_capacity(d_max);
                for d in 1..=d_max {
                    let mut xhat = DenseMatrix::zeros(big_p, big_q);
                    for i in 0..big_p {
                        for j in 0..big_q {
                            let (v, _) = agg.estimate_entry(i, j, d, &weights)?;
                            xhat.set(i, j, v);
                        }
                    }
                    mses.push(mse(&xhat, &x, None)?);
                    if let Some(idx) = &region {
                        region_mses.push(mse(&xhat, &x, Some(idx))?);
                    }
                }
                mse_by_rank.push(mses);
                if let Some(per_rank) = region_mse_by_rank.as_mut() {
                    per_rank.push(region_mses);
                }
            }
            let benchmark_region_mse = match &region {
                Some(idx) => {
                    let bench = crate::aggregation::benchmark_mean_fill(&y_obs, &mask)?;
                    Some(mse(&bench, &x, Some(idx))?)
                }
                None => None,
            };
            let cv_curve = if with_cv {
                let part = crate::aggregation::cv_partition(
                    &mask,
                    10,
                    mix_seed(rep_seed, &[0xcf]),
                )?;
                Some(crate::aggregation::cv_mse_curve(
                    &y_obs,
                    &mask,
                    &part,
                    &ranking,
                    d_max,
                    &weights,
                    fit_ranks[0],
                    &policy,
                )?)
            } else {
                None
            };
            Ok(ReplicateOutcome {
                top_configs,
                mse_by_rank,
                region_mse_by_rank,
                benchmark_region_mse,
                cv_curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_mse_by_rank: Vec<Vec<f64>> = (0..fit_ranks.len())
        .map(|ri| {
            (0..d_max)
                .map(|di| {
                    replicates.iter().map(|r| r.mse_by_rank[ri][di]).sum::<f64>()
                        / replicates.len() as f64
                })
                .collect()
        })
        .collect();
    let median_region_mse_by_rank = forced_block.map(|_| {
        (0..fit_ranks.len())
            .map(|ri| {
                (0..d_max)
                    .map(|di| {
                        let mut vals: Vec<f64> = replicates
                            .iter()
                            .map(|r| r.region_mse_by_rank.as_ref().expect("region present")[ri][di])
                            .collect();
                        median(&mut vals)
                    })
                    .collect()
            })
            .collect()
    });
    let median_benchmark_region_mse = forced_block.map(|_| {
        let mut vals: Vec<f64> = replicates
            .iter()
            .map(|r| r.benchmark_region_mse.expect("benchmark present"))
            .collect();
        median(&mut vals)
    });
    Ok(AggregationStudyReport {
        spec: spec.clone(),
        d_max,
        fit_ranks,
        forced_block,
        replicates,
        mean_mse_by_rank,
        median_region_mse_by_rank,
        median_benchmark_region_mse,
    })
}

/// Top-level simulation artifact emitted by the command-line driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulationReport {
    Sweep(SweepReport),
    Aggregation(AggregationStudyReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_select::select_configuration;

    fn dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum()
    }

    #[test]
    fn krank1_pair_construction_identities() {
        for seed in 0..5u64 {
            let (a, b) = gen_krank1_pair(4, 4, 9, 9, 0.5, seed).unwrap();
            assert_eq!((a.rows(), a.cols()), (16, 16));
            assert_eq!((b.rows(), b.cols()), (32, 32));
            assert!((a.frobenius_norm() - 1.0).abs() < 1e-10);
            assert!((b.frobenius_norm() - 1.0).abs() < 1e-10);
            // top and bottom halves are orthogonal by construction
            let top = DenseMatrix::from_fn(8, 16, |i, j| a.get(i, j));
            let bot = DenseMatrix::from_fn(8, 16, |i, j| a.get(i + 8, j));
            assert!(dot(&top, &bot).abs() < 1e-10);
        }
        let (a0, _) = gen_krank1_pair(4, 4, 9, 9, 0.5, 1).unwrap();
        let (a1, _) = gen_krank1_pair(4, 4, 9, 9, 0.5, 2).unwrap();
        assert!(a0.sub(&a1).unwrap().frobenius_norm() > 1e-6);
        assert!(matches!(
            gen_krank1_pair(4, 4, 9, 9, 1.0, 0),
            Err(Error::InvalidGap(_))
        ));
        assert!(matches!(
            gen_krank1_pair(9, 4, 9, 9, 0.5, 0),
            Err(Error::ConfigOutOfRange(..))
        ));
    }

    #[test]
    fn krank1_gap_tracks_parameter() {
        // smaller ambient size keeps the exhaustive scan cheap
        let (a, b) = gen_krank1_pair(3, 3, 7, 7, 0.5, 11).unwrap();
        let x = kronecker_product(&a, &b);
        let truth = Configuration::new(8, 8, 128, 128).unwrap();
        let set = candidate_set(128, 128, CandidateMode::S(5)).unwrap();
        let (phi, psi2) = representation_gap(&x, &truth, &set).unwrap();
        assert!(phi <= 1.0 && (0.0..=1.0).contains(&psi2));
        assert!((psi2 - 0.5).abs() < 0.1, "psi^2 = {psi2}");
    }

    #[test]
    fn mixture_single_term_is_rank_one_at_its_configuration() {
        let spec = ScenarioSpec::new(
            7,
            7,
            vec![(4, 3)],
            0.4,
            1.0,
            1.0,
            1.0,
            1,
            CandidateMode::S(5),
            3,
            1,
        )
        .unwrap();
        let x = gen_mixture(&spec, 0).unwrap();
        assert!((x.frobenius_norm() - 1.0).abs() < 1e-10);
        let c = Configuration::new(16, 8, 128, 128).unwrap();
        let r = rearrange(&x, &c).unwrap();
        assert!((spectral_norm(&r) - x.frobenius_norm()).abs() < 1e-8);
    }

    #[test]
    fn mixture_neighbor_configurations_see_phi_wedge() {
        let spec = ScenarioSpec::new(
            7,
            7,
            vec![(4, 3)],
            0.3,
            1.0,
            1.0,
            1.0,
            1,
            CandidateMode::S(5),
            5,
            1,
        )
        .unwrap();
        let x = gen_mixture(&spec, 0).unwrap();
        // at the neighboring configurations the rearranged signal splits
        // into two orthogonal rank-one pieces of sizes phi and
        // sqrt(1 - phi^2), so the top singular value is their maximum
        let expected = spec.gap.sqrt().max((1.0 - spec.gap).sqrt());
        for (p, q) in [(16usize, 4usize), (32, 8)] {
            let c = Configuration::new(p, q, 128, 128).unwrap();
            let s = spectral_norm(&rearrange(&x, &c).unwrap());
            assert!((s - expected).abs() < 0.05, "config ({p},{q}): {s} vs {expected}");
        }
        // the two values coincide at gap 1/2, where the construction's
        // wedge approximation is exact
        let half = ScenarioSpec::new(
            7,
            7,
            vec![(4, 3)],
            0.5,
            1.0,
            1.0,
            1.0,
            1,
            CandidateMode::S(5),
            6,
            1,
        )
        .unwrap();
        let xh = gen_mixture(&half, 0).unwrap();
        let c = Configuration::new(16, 4, 128, 128).unwrap();
        let s = spectral_norm(&rearrange(&xh, &c).unwrap());
        assert!((s - 0.5f64.sqrt()).abs() < 0.05, "gap-1/2 neighbor norm {s}");
    }

    #[test]
    fn mixture_two_term_top_configs_under_full_observation() {
        let spec = ScenarioSpec::l2(17, 1);
        let x = gen_mixture(&spec, 0).unwrap();
        let (big_p, big_q) = spec.ambient();
        let mask = ObservationMask::full(big_p, big_q);
        let set = candidate_set(big_p, big_q, spec.candidate).unwrap();
        let ranking = rank_configurations(&x, &mask, &set).unwrap();
        let top: Vec<(usize, usize)> = ranking
            .scores()
            .iter()
            .take(2)
            .map(|s| (s.config.p(), s.config.q()))
            .collect();
        let mut want = vec![(32, 16), (16, 32)];
        let mut got = top.clone();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "top-2 = {top:?}");
    }

    #[test]
    fn corrupt_and_mask_moments() {
        let x = DenseMatrix::zeros(128, 128);
        let (y_obs, mask) = corrupt_and_mask(&x, 0.0, 1.0, 0).unwrap();
        assert_eq!(mask.len(), 128 * 128);
        assert_eq!(y_obs, x);
        // observed fraction within 3 binomial standard deviations
        let tau = 0.3;
        let (_, mask) = corrupt_and_mask(&x, 1.0, tau, 1).unwrap();
        let n = (128 * 128) as f64;
        let sd = (tau * (1.0 - tau) / n).sqrt();
        let frac = mask.len() as f64 / n;
        assert!((frac - tau).abs() < 3.0 * sd, "fraction {frac}");
        // noise variance of Y - X on the full mask
        let (y, full) = corrupt_and_mask(&x, 2.0, 1.0, 2).unwrap();
        assert_eq!(full.len(), 128 * 128);
        let var = y.frobenius_norm().powi(2) / n;
        let want = 4.0 / n;
        assert!((var - want).abs() < 0.05 * want, "var {var} vs {want}");
        // determinism
        let (y1, m1) = corrupt_and_mask(&x, 1.5, 0.4, 9).unwrap();
        let (y2, m2) = corrupt_and_mask(&x, 1.5, 0.4, 9).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn incoherence_extremes() {
        let ones = DenseMatrix::from_fn(4, 6, |_, _| 3.5);
        assert!((incoherence_coefficient(&ones).unwrap() - 1.0).abs() < 1e-12);
        let mut spike = DenseMatrix::zeros(4, 6);
        spike.set(2, 3, -2.0);
        assert!((incoherence_coefficient(&spike).unwrap() - 24f64.sqrt()).abs() < 1e-12);
        assert!(incoherence_coefficient(&DenseMatrix::zeros(2, 2)).is_err());
        let mut rng = stream_rng(77, &[1]);
        use rand::Rng;
        let g = DenseMatrix::from_fn(64, 64, |_, _| rng.gen::<f64>() - 0.5);
        let mu = incoherence_coefficient(&g).unwrap();
        assert!((1.0..=64.0).contains(&mu));
    }

    #[test]
    fn representation_gap_matches_exhaustive_enumeration() {
        let mut rng = stream_rng(88, &[2]);
        use rand::Rng;
        let x = DenseMatrix::from_fn(16, 16, |_, _| rng.gen::<f64>() - 0.5);
        let truth = Configuration::new(4, 4, 16, 16).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let (phi, psi2) = representation_gap(&x, &truth, &set).unwrap();
        let xn = x.scale(1.0 / x.frobenius_norm());
        let brute = set
            .members()
            .iter()
            .filter(|c| **c != truth)
            .map(|c| spectral_norm(&rearrange(&xn, c).unwrap()))
            .fold(0.0f64, f64::max);
        assert!((phi - brute).abs() < 1e-12);
        assert!((psi2 - (1.0 - brute * brute)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&psi2));
    }

    #[test]
    fn mse_and_reconstruction_error_basics() {
        let x = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(mse(&x, &x, None).unwrap(), 0.0);
        let shifted = DenseMatrix::from_fn(3, 4, |i, j| x.get(i, j) + 0.5);
        assert!((mse(&shifted, &x, None).unwrap() - 0.25).abs() < 1e-14);
        let region = vec![(1usize, 2usize)];
        let mut one_off = x.clone();
        one_off.set(1, 2, x.get(1, 2) + 3.0);
        assert!((mse(&one_off, &x, Some(&region)).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(reconstruction_error(&x, &x).unwrap(), 0.0);
        assert!((reconstruction_error(&DenseMatrix::zeros(3, 4), &x).unwrap() - 1.0).abs() < 1e-14);
        assert!((reconstruction_error(&x.scale(2.0), &x).unwrap() - 1.0).abs() < 1e-14);
        assert!(reconstruction_error(&x, &DenseMatrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn selection_recovers_truth_at_high_snr_small_case() {
        // noisier, smaller analogue of the sweep: strong signal at 128x128
        let set = candidate_set(128, 128, CandidateMode::S(5)).unwrap();
        let mut hits = 0;
        for seed in 0..5u64 {
            let (a, b) = gen_krank1_pair(3, 3, 7, 7, 0.5, seed).unwrap();
            let mut x = DenseMatrix::zeros(128, 128);
            kron_add_into(&mut x, 3.0, &a, &b);
            let (y_obs, mask) = corrupt_and_mask(&x, 1.0, 0.5, seed).unwrap();
            let best = select_configuration(&y_obs, &mask, &set).unwrap();
            if (best.p(), best.q()) == (8, 8) {
                hits += 1;
            }
        }
        assert!(hits >= 4, "hits = {hits}");
    }

    #[test]
    fn sweep_report_shapes_and_gamma() {
        let grid = SweepGrid {
            m0: 3,
            n0: 3,
            big_m: 7,
            big_n: 7,
            snrs: vec![0.2, 3.0],
            taus: vec![0.5],
            gaps: vec![0.5],
            modes: vec![CandidateMode::S(5)],
            replicates: 4,
            seed: 99,
            early_stop_gamma: false,
        };
        let report = run_selection_sweep(&grid).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.gamma_star.len(), 1);
        let hi = report.cells.iter().find(|c| c.snr == 3.0).unwrap();
        assert!(hi.frequency > 0.5, "high-snr frequency {}", hi.frequency);
        // gamma is the smallest swept snr whose frequency exceeds 1/2
        let want = report
            .cells
            .iter()
            .filter(|c| c.frequency > 0.5)
            .map(|c| c.snr)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.gamma_star[0].gamma, Some(want));
    }

    #[test]
    fn aggregation_study_small_scale_smoke() {
        // 128x128 analogue of the benchmark scenarios: checks report
        // shapes, determinism of the summary, and that aggregation runs
        // end to end with both fit ranks
        let spec = ScenarioSpec::new(
            7,
            7,
            vec![(4, 3)],
            0.4,
            1.0,
            1.0,
            0.4,
            1,
            CandidateMode::S(5),
            21,
            2,
        )
        .unwrap();
        let report = run_aggregation_study(&spec, 3, None, true).unwrap();
        assert_eq!(report.replicates.len(), 2);
        assert_eq!(report.fit_ranks, vec![1, 2]);
        assert_eq!(report.mean_mse_by_rank.len(), 2);
        assert_eq!(report.mean_mse_by_rank[0].len(), 3);
        for rep in &report.replicates {
            assert_eq!(rep.mse_by_rank[0].len(), 3);
            assert!(rep.region_mse_by_rank.is_none());
            let cv = rep.cv_curve.as_ref().unwrap();
            assert_eq!(cv.len(), 3);
            assert!(cv.iter().all(|v| *v >= 0.0));
        }
        let again = run_aggregation_study(&spec, 3, None, false).unwrap();
        for (a, b) in report
            .mean_mse_by_rank
            .iter()
            .zip(&again.mean_mse_by_rank)
        {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn aggregation_study_forced_block_reports_region() {
        let spec = ScenarioSpec::new(
            7,
            7,
            vec![(4, 3)],
            0.4,
            1.0,
            1.0,
            0.5,
            1,
            CandidateMode::S(5),
            33,
            2,
        )
        .unwrap();
        // block matching the true configuration's factor shape: 2^3 x 2^4
        let report = run_aggregation_study(&spec, 3, Some((8, 16)), false).unwrap();
        let medians = report.median_region_mse_by_rank.as_ref().unwrap();
        assert_eq!(medians.len(), 2);
        assert_eq!(medians[0].len(), 3);
        assert!(report.median_benchmark_region_mse.unwrap() > 0.0);
        for rep in &report.replicates {
            assert!(rep.benchmark_region_mse.unwrap() >= 0.0);
            assert_eq!(rep.region_mse_by_rank.as_ref().unwrap()[0].len(), 3);
        }
    }

    #[test]
    fn median_helper() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [5.0]), 5.0);
    }
}
