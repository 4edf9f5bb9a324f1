//! Multi-configuration aggregation: irrecoverable-entry detection, the
//! entrywise weighted-average estimator over the top-ranked configurations,
//! the mean-fill benchmark, dimension padding, and K-fold cross-validation
//! for choosing how many configurations to aggregate.

use serde::{Deserialize, Serialize};

use crate::als::{complete, ConvergencePolicy, KroneckerModel};
use crate::config_select::ConfigRanking;
use crate::error::{Error, Result};
use crate::matrix::{project, rearrange_mask, Configuration, DenseMatrix, ObservationMask};
use crate::rng::stream_rng;

/// Entries (0-based) that cannot be recovered under `c`: their rearranged
/// row or rearranged column is completely unobserved.
pub fn irrecoverable_entries(
    mask: &ObservationMask,
    c: &Configuration,
) -> Result<Vec<(usize, usize)>> {
    let rm = rearrange_mask(mask, c)?;
    let (rr, rc) = (rm.rows(), rm.cols());
    let mut row_observed = vec![false; rr];
    let mut col_observed = vec![false; rc];
    for (i, j) in rm.indices() {
        row_observed[i] = true;
        col_observed[j] = true;
    }
    let ps = c.p_star();
    let qs = c.q_star();
    let (big_p, big_q) = c.ambient();
    let mut flagged = vec![false; big_p * big_q];
    // empty rearranged row g = bi + bj*p  <->  block (bi, bj) of the original
    for (g, seen) in row_observed.iter().enumerate() {
        if *seen {
            continue;
        }
        let bi = g % c.p();
        let bj = g / c.p();
        for k in 0..ps {
            for l in 0..qs {
                flagged[(bi * ps + k) * big_q + (bj * qs + l)] = true;
            }
        }
    }
    // empty rearranged column h = k + l*p*  <->  lattice {(bi*p* + k, bj*q* + l)}
    for (h, seen) in col_observed.iter().enumerate() {
        if *seen {
            continue;
        }
        let k = h % ps;
        let l = h / ps;
        for bi in 0..c.p() {
            for bj in 0..c.q() {
                flagged[(bi * ps + k) * big_q + (bj * qs + l)] = true;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..big_p {
        for j in 0..big_q {
            if flagged[i * big_q + j] {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Per-configuration feasibility indicators and the per-entry index of the
/// best (highest-ranked) feasible configuration.
#[derive(Debug, Clone)]
pub struct FeasibilityMap {
    rows: usize,
    cols: usize,
    /// feasible[k][i*cols + j]: entry (i, j) recoverable under the k-th
    /// ranked configuration.
    feasible: Vec<Vec<bool>>,
    /// 1-based rank of the first feasible configuration; None if infeasible
    /// under every ranked configuration.
    d_min: Vec<Option<usize>>,
}

impl FeasibilityMap {
    pub fn num_configs(&self) -> usize {
        self.feasible.len()
    }

    pub fn is_feasible(&self, i: usize, j: usize, k: usize) -> bool {
        self.feasible[k][i * self.cols + j]
    }

    /// `d_ij`: 1-based rank of the best feasible configuration.
    pub fn best_feasible(&self, i: usize, j: usize) -> Option<usize> {
        self.d_min[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Compute feasibility indicators for every configuration in the ranking.
pub fn feasibility_map(mask: &ObservationMask, ranking: &ConfigRanking) -> Result<FeasibilityMap> {
    let rows = mask.rows();
    let cols = mask.cols();
    let mut feasible = Vec::with_capacity(ranking.len());
    for score in ranking.scores() {
        let mut f = vec![true; rows * cols];
        for (i, j) in irrecoverable_entries(mask, &score.config)? {
            f[i * cols + j] = false;
        }
        feasible.push(f);
    }
    let mut d_min = vec![None; rows * cols];
    for (idx, slot) in d_min.iter_mut().enumerate() {
        *slot = feasible.iter().position(|f| f[idx]).map(|k| k + 1);
    }
    Ok(FeasibilityMap {
        rows,
        cols,
        feasible,
        d_min,
    })
}

/// How entries infeasible under all of the top `d` configurations are
/// handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackMode {
    /// Use the best feasible configuration beyond rank `d` (the `d v d_ij`
    /// upper limit of the weighted-average estimator); benchmark mean-fill
    /// only when no ranked configuration is feasible.
    ExtendToFeasible,
    /// Never reach past rank `d`; benchmark mean-fill for entries
    /// infeasible under all of the top `d` configurations. This is the
    /// convention of the missing-block study.
    TruncateAtD,
}

#[derive(Debug, Clone)]
enum FitState {
    NotTried,
    Fitted(Box<(KroneckerModel, DenseMatrix)>),
    Failed(String),
}

/// Result of the aggregated estimator.
#[derive(Debug, Clone)]
pub struct AggregateEstimate {
    pub ranking: ConfigRanking,
    pub weights: Vec<f64>,
    /// Fitted model per ranked configuration; None when the configuration
    /// was not needed or its completion failed.
    pub models: Vec<Option<KroneckerModel>>,
    pub d: usize,
    pub combined: DenseMatrix,
    /// Entries that required a configuration ranked below `d`.
    pub fallback_entries: Vec<(usize, usize)>,
    /// Entries infeasible under every ranked configuration, filled by the
    /// mean-fill benchmark.
    pub infeasible_entries: Vec<(usize, usize)>,
    /// Configurations dropped from the average because completion failed:
    /// (1-based rank, error message).
    pub dropped: Vec<(usize, String)>,
}

/// Shared engine behind `aggregate_estimate` and the CV loop: fits ranked
/// configurations lazily and evaluates the weighted-average estimator
/// entry by entry.
pub(crate) struct Aggregator<'a> {
    y_obs: DenseMatrix,
    mask: &'a ObservationMask,
    configs: Vec<Configuration>,
    fmap: FeasibilityMap,
    fits: Vec<FitState>,
    r: usize,
    policy: ConvergencePolicy,
    mode: FallbackMode,
    benchmark: Option<f64>,
}


/// Where an entry estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EntrySource {
    Aggregated,
    Fallback(usize),
    Benchmark,
}

impl<'a> Aggregator<'a> {
    pub(crate) fn new(
        y_obs: &DenseMatrix,
        mask: &'a ObservationMask,
        ranking: &ConfigRanking,
        r: usize,
        policy: &ConvergencePolicy,
        mode: FallbackMode,
    ) -> Result<Self> {
        let y_obs = project(y_obs, mask)?;
        let fmap = feasibility_map(mask, ranking)?;
        Ok(Self {
            y_obs,
            mask,
            configs: ranking.configs(),
            fits: vec![FitState::NotTried; ranking.len()],
            fmap,
            r,
            policy: policy.clone(),
            mode,
            benchmark: None,
        })
    }

    fn ensure_fit(&mut self, k: usize) {
        if matches!(self.fits[k], FitState::NotTried) {
            self.fits[k] = match complete(&self.y_obs, self.mask, &self.configs[k], self.r, &self.policy)
            {
                Ok(fit) => FitState::Fitted(Box::new(fit)),
                Err(e) => FitState::Failed(e.to_string()),
            };
        }
    }

    pub(crate) fn ensure_fits_up_to(&mut self, d: usize) {
        for k in 0..d.min(self.configs.len()) {
            self.ensure_fit(k);
        }
    }

    fn benchmark_value(&mut self) -> Result<f64> {
        if let Some(v) = self.benchmark {
            return Ok(v);
        }
        if self.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let total: f64 = self
            .mask
            .indices()
            .iter()
            .map(|&(i, j)| self.y_obs.get(i, j))
            .sum();
        let v = total / self.mask.len() as f64;
        self.benchmark = Some(v);
        Ok(v)
    }

    /// Weighted-average estimate of entry (i, j) aggregating the top `d`
    /// configurations.
    pub(crate) fn estimate_entry(
        &mut self,
        i: usize,
        j: usize,
        d: usize,
        weights: &[f64],
    ) -> Result<(f64, EntrySource)> {
        let d = d.min(self.configs.len());
        self.ensure_fits_up_to(d);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..d {
            if !self.fmap.is_feasible(i, j, k) {
                continue;
            }
            if let FitState::Fitted(fit) = &self.fits[k] {
                let w = weights.get(k).copied().unwrap_or(1.0);
                num += w * fit.1.get(i, j);
                den += w;
            }
        }
        if den > 0.0 {
            return Ok((num / den, EntrySource::Aggregated));
        }
        if self.mode == FallbackMode::ExtendToFeasible {
            for k in d..self.configs.len() {
                if !self.fmap.is_feasible(i, j, k) {
                    continue;
                }
                self.ensure_fit(k);
                if let FitState::Fitted(fit) = &self.fits[k] {
                    return Ok((fit.1.get(i, j), EntrySource::Fallback(k + 1)));
                }
            }
        }
        Ok((self.benchmark_value()?, EntrySource::Benchmark))
    }

    fn into_parts(self) -> (Vec<Option<KroneckerModel>>, Vec<(usize, String)>) {
        let mut models = Vec::with_capacity(self.fits.len());
        let mut dropped = Vec::new();
        for (k, fit) in self.fits.into_iter().enumerate() {
            match fit {
                FitState::Fitted(b) => models.push(Some(b.0)),
                FitState::Failed(msg) => {
                    dropped.push((k + 1, msg));
                    models.push(None);
                }
                FitState::NotTried => models.push(None),
            }
        }
        (models, dropped)
    }
}

fn validate_weights(weights: &[f64], d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if weights.len() < d {
        return Err(Error::InvalidArgument(format!(
            "need at least {d} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().take(d).any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument(
            "weights must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// Aggregated estimator over the top `d` ranked configurations with the
/// `d v d_ij` per-entry fallback.
pub fn aggregate_estimate(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    ranking: &ConfigRanking,
    d: usize,
    weights: &[f64],
    r: usize,
    policy: &ConvergencePolicy,
) -> Result<AggregateEstimate> {
    aggregate_estimate_with_mode(
        y_obs,
        mask,
        ranking,
        d,
        weights,
        r,
        policy,
        FallbackMode::ExtendToFeasible,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn aggregate_estimate_with_mode(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    ranking: &ConfigRanking,
    d: usize,
    weights: &[f64],
    r: usize,
    policy: &ConvergencePolicy,
    mode: FallbackMode,
) -> Result<AggregateEstimate> {
    validate_weights(weights, d.min(ranking.len()).max(1))?;
    if ranking.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut agg = Aggregator::new(y_obs, mask, ranking, r, policy, mode)?;
    let rows = mask.rows();
    let cols = mask.cols();
    let mut combined = DenseMatrix::zeros(rows, cols);
    let mut fallback_entries = Vec::new();
    let mut infeasible_entries = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let (value, source) = agg.estimate_entry(i, j, d, weights)?;
            combined.set(i, j, value);
            match source {
                EntrySource::Aggregated => {}
                EntrySource::Fallback(_) => fallback_entries.push((i, j)),
                EntrySource::Benchmark => infeasible_entries.push((i, j)),
            }
        }
    }
    let (models, dropped) = agg.into_parts();
    Ok(AggregateEstimate {
        ranking: ranking.clone(),
        weights: weights.to_vec(),
        models,
        d,
        combined,
        fallback_entries,
        infeasible_entries,
        dropped,
    })
}

/// Keep observed entries; fill missing entries with the mean of the
/// observed ones.
pub fn benchmark_mean_fill(y_obs: &DenseMatrix, mask: &ObservationMask) -> Result<DenseMatrix> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if y_obs.rows() != mask.rows() || y_obs.cols() != mask.cols() {
        return Err(Error::DimensionMismatch("matrix vs mask".into()));
    }
    let total: f64 = mask
        .indices()
        .iter()
        .map(|&(i, j)| y_obs.get(i, j))
        .sum();
    let mean = total / mask.len() as f64;
    Ok(DenseMatrix::from_fn(y_obs.rows(), y_obs.cols(), |i, j| {
        if mask.is_observed(i, j) {
            y_obs.get(i, j)
        } else {
            mean
        }
    }))
}

/// Embed the observed matrix top-left in a larger zero matrix; the added
/// rows and columns are fully unobserved. Gives dimensions more divisors.
pub fn pad_dimensions(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    new_rows: usize,
    new_cols: usize,
) -> Result<(DenseMatrix, ObservationMask)> {
    if new_rows < y_obs.rows() || new_cols < y_obs.cols() {
        return Err(Error::ShrinkNotAllowed(
            new_rows,
            new_cols,
            y_obs.rows(),
            y_obs.cols(),
        ));
    }
    let mut y = DenseMatrix::zeros(new_rows, new_cols);
    for i in 0..y_obs.rows() {
        for j in 0..y_obs.cols() {
            y.set(i, j, y_obs.get(i, j));
        }
    }
    let mut m = ObservationMask::empty(new_rows, new_cols);
    for (i, j) in mask.indices() {
        m.insert(i, j);
    }
    Ok((y, m))
}

/// Random K-fold partition of the observed index set; fold sizes differ by
/// at most one. Deterministic given the seed.
#[derive(Debug, Clone)]
pub struct FoldPartition {
    pub folds: Vec<ObservationMask>,
}

impl FoldPartition {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

pub fn cv_partition(mask: &ObservationMask, k: usize, seed: u64) -> Result<FoldPartition> {
    let n = mask.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {k} invalid for {n} observed entries"
        )));
    }
    let mut indices = mask.indices();
    let mut rng = stream_rng(seed, &[0xc5, k as u64]);
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let fold =
            ObservationMask::from_indices(mask.rows(), mask.cols(), &indices[offset..offset + size])?;
        folds.push(fold);
        offset += size;
    }
    Ok(FoldPartition { folds })
}

/// K-fold CV mean squared error of the aggregate over the first `k`
/// configurations.
#[allow(clippy::too_many_arguments)]
pub fn cv_mse(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    partition: &FoldPartition,
    ranking: &ConfigRanking,
    k: usize,
    weights: &[f64],
    r: usize,
    policy: &ConvergencePolicy,
) -> Result<f64> {
    let curve = cv_mse_curve(y_obs, mask, partition, ranking, k, weights, r, policy)?;
    Ok(curve[k - 1])
}

/// CV-MSE for every aggregation size `1..=k_max`, sharing per-fold fits
/// across sizes. Training sets differ per fold, so fits are never shared
/// across folds.
#[allow(clippy::too_many_arguments)]
pub fn cv_mse_curve(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    partition: &FoldPartition,
    ranking: &ConfigRanking,
    k_max: usize,
    weights: &[f64],
    r: usize,
    policy: &ConvergencePolicy,
) -> Result<Vec<f64>> {
    let k_max = k_max.min(ranking.len());
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let mut sq_err = vec![0.0; k_max];
    for (fold_idx, fold) in partition.folds.iter().enumerate() {
        let train = mask.difference(fold)?;
        let mut run = || -> Result<()> {
            let mut agg = Aggregator::new(
                y_obs,
                &train,
                ranking,
                r,
                policy,
                FallbackMode::ExtendToFeasible,
            )?;
            for (i, j) in fold.indices() {
                let truth = y_obs.get(i, j);
                for (ki, err) in sq_err.iter_mut().enumerate() {
                    let (est, _) = agg.estimate_entry(i, j, ki + 1, weights)?;
                    let diff = truth - est;
                    *err += diff * diff;
                }
            }
            Ok(())
        };
        run().map_err(|e| Error::FoldFailed {
            index: fold_idx,
            source: Box::new(e),
        })?;
    }
    let n = mask.len() as f64;
    Ok(sq_err.into_iter().map(|s| s / n).collect())
}

/// Number of aggregated configurations minimizing CV-MSE; ties resolve to
/// the smallest `k`.
#[allow(clippy::too_many_arguments)]
pub fn select_num_configurations(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    partition: &FoldPartition,
    ranking: &ConfigRanking,
    k_max: usize,
    weights: &[f64],
    r: usize,
    policy: &ConvergencePolicy,
) -> Result<usize> {
    let curve = cv_mse_curve(y_obs, mask, partition, ranking, k_max, weights, r, policy)?;
    let mut best = 0;
    for (k, v) in curve.iter().enumerate() {
        if *v < curve[best] {
            best = k;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_select::{rank_configurations, ConfigScore};
    use crate::matrix::{candidate_set, kronecker_product, CandidateMode};
    use rand::Rng;

    fn random_unit(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, &[rows as u64, cols as u64]);
        let m = DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        m.scale(1.0 / m.frobenius_norm())
    }

    fn bernoulli_mask(rows: usize, cols: usize, tau: f64, seed: u64) -> ObservationMask {
        let mut rng = stream_rng(seed, &[rows as u64, cols as u64, 7]);
        let mut mask = ObservationMask::empty(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.gen::<f64>() < tau {
                    mask.insert(i, j);
                }
            }
        }
        mask
    }

    /// Direct evaluation of the two index-set conditions defining an
    /// irrecoverable entry, independent of the rearrangement code path.
    fn irrecoverable_oracle(
        mask: &ObservationMask,
        c: &Configuration,
    ) -> Vec<(usize, usize)> {
        let (big_p, big_q) = c.ambient();
        let ps = c.p_star();
        let qs = c.q_star();
        let observed = mask.indices();
        let mut out = Vec::new();
        for i in 0..big_p {
            for j in 0..big_q {
                // row condition: no observed entry in the same block
                let row_empty = !observed
                    .iter()
                    .any(|&(ip, jp)| ip / ps == i / ps && jp / qs == j / qs);
                // column condition: no observed entry on the lattice
                // i' = i + l*p*, j' = j + m*q*
                let col_empty = !observed
                    .iter()
                    .any(|&(ip, jp)| ip % ps == i % ps && jp % qs == j % qs);
                if row_empty || col_empty {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn irrecoverable_full_mask_is_empty() {
        let c = Configuration::new(3, 2, 6, 4).unwrap();
        let mask = ObservationMask::full(6, 4);
        assert!(irrecoverable_entries(&mask, &c).unwrap().is_empty());
    }

    #[test]
    fn missing_block_irrecoverable_at_true_config_not_at_split() {
        // 16x16, true configuration (4, 4): blocks are 4x4
        let c0 = Configuration::new(4, 4, 16, 16).unwrap();
        let mut mask = ObservationMask::full(16, 16);
        for i in 0..4 {
            for j in 0..4 {
                mask.remove(i, j);
            }
        }
        let bad = irrecoverable_entries(&mask, &c0).unwrap();
        let expected: Vec<(usize, usize)> =
            (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
        assert_eq!(bad, expected);
        // halve p, double q: the block entries become recoverable
        let c1 = Configuration::new(2, 8, 16, 16).unwrap();
        assert!(irrecoverable_entries(&mask, &c1).unwrap().is_empty());
    }

    #[test]
    fn irrecoverable_matches_definition_oracle() {
        for seed in 0..30 {
            let mut rng = stream_rng(400, &[seed]);
            let mask = bernoulli_mask(12, 12, 0.15, seed);
            let _ = &mut rng;
            for &p in &[1usize, 2, 3, 4, 6, 12] {
                for &q in &[1usize, 2, 3, 4, 6, 12] {
                    let c = Configuration::new(p, q, 12, 12).unwrap();
                    let got = irrecoverable_entries(&mask, &c).unwrap();
                    let want = irrecoverable_oracle(&mask, &c);
                    assert_eq!(got, want, "seed {seed}, config ({p}, {q})");
                }
            }
        }
    }

    #[test]
    fn monotone_feasibility_under_mask_growth() {
        let c = Configuration::new(4, 2, 8, 8).unwrap();
        let small = bernoulli_mask(8, 8, 0.15, 3);
        let mut large = small.clone();
        large.insert(0, 0);
        large.insert(5, 6);
        large.insert(7, 7);
        let bad_small: std::collections::BTreeSet<_> =
            irrecoverable_entries(&small, &c).unwrap().into_iter().collect();
        let bad_large: std::collections::BTreeSet<_> =
            irrecoverable_entries(&large, &c).unwrap().into_iter().collect();
        assert!(bad_large.is_subset(&bad_small));
    }

    fn trivial_ranking(configs: &[(usize, usize)], big: (usize, usize)) -> ConfigRanking {
        ConfigRanking::from_scores(
            configs
                .iter()
                .enumerate()
                .map(|(k, &(p, q))| ConfigScore {
                    config: Configuration::new(p, q, big.0, big.1).unwrap(),
                    score: 1.0 - 0.1 * k as f64,
                })
                .collect(),
        )
    }

    #[test]
    fn feasibility_map_full_mask() {
        let mask = ObservationMask::full(8, 8);
        let ranking = trivial_ranking(&[(2, 2), (4, 4)], (8, 8));
        let fmap = feasibility_map(&mask, &ranking).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!(fmap.is_feasible(i, j, 0));
                assert!(fmap.is_feasible(i, j, 1));
                assert_eq!(fmap.best_feasible(i, j), Some(1));
            }
        }
    }

    #[test]
    fn feasibility_map_d_two_and_infinity() {
        // mask empty in the first 2x2 block of a 4x4 matrix;
        // config (2,2) has 2x2 blocks -> block infeasible under it;
        // config (4,1): blocks are 1x4 rows... choose (1,4): blocks 4x1
        // columns; entry (0,0) shares block with observed (2,0) -> feasible.
        let mut mask = ObservationMask::full(4, 4);
        mask.remove(0, 0);
        mask.remove(0, 1);
        mask.remove(1, 0);
        mask.remove(1, 1);
        let ranking = trivial_ranking(&[(2, 2), (1, 4)], (4, 4));
        let fmap = feasibility_map(&mask, &ranking).unwrap();
        assert!(!fmap.is_feasible(0, 0, 0));
        assert!(fmap.is_feasible(0, 0, 1));
        assert_eq!(fmap.best_feasible(0, 0), Some(2));
        // entry infeasible under every ranked configuration: empty row
        // across all configs
        let mut empty_row = ObservationMask::full(4, 4);
        for j in 0..4 {
            empty_row.remove(3, j);
        }
        // with only the degenerate (1,1) configuration the rearranged matrix
        // is vec(Y) as a column: an empty original row is not an empty
        // rearranged row, so use (4,4): each entry its own block
        let ranking2 = trivial_ranking(&[(4, 4)], (4, 4));
        let fmap2 = feasibility_map(&empty_row, &ranking2).unwrap();
        assert_eq!(fmap2.best_feasible(3, 0), None);
    }

    #[test]
    fn aggregate_single_config_equals_completion() {
        let a = random_unit(4, 4, 91);
        let b = random_unit(4, 4, 92);
        let x = kronecker_product(&a, &b).scale(2.0);
        let mask = bernoulli_mask(16, 16, 0.7, 11);
        let y_obs = project(&x, &mask).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let ranking = rank_configurations(&y_obs, &mask, &set).unwrap();
        let policy = ConvergencePolicy::default();
        let est = aggregate_estimate(&y_obs, &mask, &ranking, 1, &[1.0], 1, &policy).unwrap();
        let top = ranking.best().unwrap().config;
        let (_, single) = complete(&y_obs, &mask, &top, 1, &policy).unwrap();
        assert!(est.combined.sub(&single).unwrap().frobenius_norm() < 1e-12);
        assert!(est.infeasible_entries.is_empty());
    }

    #[test]
    fn aggregate_equal_weights_is_arithmetic_mean() {
        let a = random_unit(4, 4, 93);
        let b = random_unit(4, 4, 94);
        let x = kronecker_product(&a, &b);
        let mask = bernoulli_mask(16, 16, 0.8, 13);
        let y_obs = project(&x, &mask).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let ranking = rank_configurations(&y_obs, &mask, &set).unwrap();
        let policy = ConvergencePolicy::default();
        let est = aggregate_estimate(&y_obs, &mask, &ranking, 2, &[1.0, 1.0], 1, &policy).unwrap();
        let c1 = ranking.scores()[0].config;
        let c2 = ranking.scores()[1].config;
        let (_, x1) = complete(&y_obs, &mask, &c1, 1, &policy).unwrap();
        let (_, x2) = complete(&y_obs, &mask, &c2, 1, &policy).unwrap();
        let mean = x1.add(&x2).unwrap().scale(0.5);
        assert!(est.combined.sub(&mean).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn aggregate_convexity_between_contributors() {
        let a = random_unit(4, 4, 95);
        let b = random_unit(4, 4, 96);
        let x = kronecker_product(&a, &b);
        let mask = bernoulli_mask(16, 16, 0.8, 17);
        let y_obs = project(&x, &mask).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let ranking = rank_configurations(&y_obs, &mask, &set).unwrap();
        let policy = ConvergencePolicy::default();
        let est =
            aggregate_estimate(&y_obs, &mask, &ranking, 2, &[2.0, 1.0], 1, &policy).unwrap();
        let (_, x1) = complete(&y_obs, &mask, &ranking.scores()[0].config, 1, &policy).unwrap();
        let (_, x2) = complete(&y_obs, &mask, &ranking.scores()[1].config, 1, &policy).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let lo = x1.get(i, j).min(x2.get(i, j));
                let hi = x1.get(i, j).max(x2.get(i, j));
                let v = est.combined.get(i, j);
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn benchmark_mean_fill_cases() {
        let y = DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(
            benchmark_mean_fill(&y, &ObservationMask::full(3, 3)).unwrap(),
            y
        );
        let single = ObservationMask::from_indices(3, 3, &[(0, 0)]).unwrap();
        let mut y7 = DenseMatrix::zeros(3, 3);
        y7.set(0, 0, 7.0);
        let filled = benchmark_mean_fill(&y7, &single).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(filled.get(i, j), 7.0);
            }
        }
        assert!(matches!(
            benchmark_mean_fill(&y, &ObservationMask::empty(3, 3)),
            Err(Error::EmptyMask)
        ));
        // random case with summation oracle
        let mask = bernoulli_mask(3, 3, 0.5, 220);
        if !mask.is_empty() {
            let filled = benchmark_mean_fill(&y, &mask).unwrap();
            let mean: f64 = mask.indices().iter().map(|&(i, j)| y.get(i, j)).sum::<f64>()
                / mask.len() as f64;
            for i in 0..3 {
                for j in 0..3 {
                    let want = if mask.is_observed(i, j) { y.get(i, j) } else { mean };
                    assert_eq!(filled.get(i, j), want);
                }
            }
        }
    }

    #[test]
    fn pad_dimensions_identity_and_growth() {
        let y = DenseMatrix::from_fn(5, 5, |i, j| (i + j) as f64);
        let mask = bernoulli_mask(5, 5, 0.5, 230);
        let (y2, m2) = pad_dimensions(&y, &mask, 5, 5).unwrap();
        assert_eq!(y2, y);
        assert_eq!(m2.len(), mask.len());
        let (y3, m3) = pad_dimensions(&y, &mask, 8, 8).unwrap();
        assert_eq!((y3.rows(), y3.cols()), (8, 8));
        assert_eq!(m3.len(), mask.len());
        for i in 5..8 {
            for j in 0..8 {
                assert!(!m3.is_observed(i, j));
                assert_eq!(y3.get(i, j), 0.0);
            }
        }
        assert!(matches!(
            pad_dimensions(&y, &mask, 4, 8),
            Err(Error::ShrinkNotAllowed(4, 8, 5, 5))
        ));
    }

    #[test]
    fn cv_partition_sizes_and_determinism() {
        let mask = ObservationMask::from_indices(
            5,
            2,
            &(0..5).flat_map(|i| (0..2).map(move |j| (i, j))).collect::<Vec<_>>(),
        )
        .unwrap();
        let part = cv_partition(&mask, 3, 42).unwrap();
        let mut sizes: Vec<usize> = part.folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        // union = mask, disjoint
        let mut seen = ObservationMask::empty(5, 2);
        for fold in &part.folds {
            for (i, j) in fold.indices() {
                assert!(!seen.is_observed(i, j), "folds overlap at ({i}, {j})");
                seen.insert(i, j);
            }
        }
        assert_eq!(seen, mask);
        // singleton folds at K = |mask|
        let singles = cv_partition(&mask, 10, 1).unwrap();
        assert!(singles.folds.iter().all(|f| f.len() == 1));
        // determinism
        let again = cv_partition(&mask, 3, 42).unwrap();
        for (a, b) in part.folds.iter().zip(&again.folds) {
            assert_eq!(a, b);
        }
        assert!(cv_partition(&mask, 11, 0).is_err());
    }

    #[test]
    fn cv_mse_zero_for_exactly_recoverable_signal() {
        // noiseless Kronecker signal, high observation rate: held-out error
        // is at numerical-noise level for any k
        let a = random_unit(4, 4, 301);
        let b = random_unit(4, 4, 302);
        let x = kronecker_product(&a, &b).scale(2.0);
        let mask = bernoulli_mask(16, 16, 0.9, 303);
        let y_obs = project(&x, &mask).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let ranking = rank_configurations(&y_obs, &mask, &set).unwrap();
        let part = cv_partition(&mask, 5, 7).unwrap();
        let policy = ConvergencePolicy::default();
        let v = cv_mse(&y_obs, &mask, &part, &ranking, 1, &[1.0], 1, &policy).unwrap();
        assert!(v < 1e-8, "CV-MSE {v}");
    }

    #[test]
    fn select_num_configurations_takes_argmin() {
        // exercise the argmin logic against the computed curve
        let a = random_unit(4, 4, 311);
        let b = random_unit(4, 4, 312);
        let x = kronecker_product(&a, &b);
        let mut rng = stream_rng(313, &[0]);
        let noise = DenseMatrix::from_fn(16, 16, |_, _| 0.02 * (rng.gen::<f64>() - 0.5));
        let y = x.add(&noise).unwrap();
        let mask = bernoulli_mask(16, 16, 0.8, 314);
        let y_obs = project(&y, &mask).unwrap();
        let set = candidate_set(16, 16, CandidateMode::Delta(0.05)).unwrap();
        let ranking = rank_configurations(&y_obs, &mask, &set).unwrap();
        let part = cv_partition(&mask, 5, 5).unwrap();
        let policy = ConvergencePolicy::default();
        let weights = vec![1.0; ranking.len()];
        let k_max = 3.min(ranking.len());
        let curve =
            cv_mse_curve(&y_obs, &mask, &part, &ranking, k_max, &weights, 1, &policy).unwrap();
        let chosen =
            select_num_configurations(&y_obs, &mask, &part, &ranking, k_max, &weights, 1, &policy)
                .unwrap();
        let best = curve
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
            + 1;
        assert_eq!(chosen, best);
    }
}
