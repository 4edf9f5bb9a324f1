//! Configuration selection: score each candidate by the spectral norm of
//! the rearranged zero-filled observed matrix and take the argmax.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{rearrange, Configuration, ConfigurationSet, DenseMatrix, ObservationMask};
use crate::spectral::spectral_norm;

/// Criterion value `G(p, q) = ||R_{p,q}[P_Omega Y]||_S` for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config: Configuration,
    pub score: f64,
}

/// Candidate configurations ordered by descending criterion value, ties
/// broken lexicographically by `(p, q)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRanking {
    scores: Vec<ConfigScore>,
}

impl ConfigRanking {
    pub fn scores(&self) -> &[ConfigScore] {
        &self.scores
    }

    pub fn configs(&self) -> Vec<Configuration> {
        self.scores.iter().map(|s| s.config).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn best(&self) -> Option<&ConfigScore> {
        self.scores.first()
    }

    /// Build directly from scores (used by tests and report loaders);
    /// enforces the descending order with lexicographic tie-break.
    pub fn from_scores(mut scores: Vec<ConfigScore>) -> Self {
        scores.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| (a.config.p(), a.config.q()).cmp(&(b.config.p(), b.config.q())))
        });
        Self { scores }
    }
}

/// Evaluate the criterion for one configuration. `y_obs` must already be
/// zero-filled outside the mask.
pub fn criterion(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    c: &Configuration,
) -> Result<ConfigScore> {
    if y_obs.rows() != mask.rows() || y_obs.cols() != mask.cols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} vs mask {}x{}",
            y_obs.rows(),
            y_obs.cols(),
            mask.rows(),
            mask.cols()
        )));
    }
    let rearranged = rearrange(y_obs, c)?;
    Ok(ConfigScore {
        config: *c,
        score: spectral_norm(&rearranged),
    })
}

/// Score every member of the candidate set and order them. Evaluations run
/// in parallel; the merge order is canonical so output is deterministic.
pub fn rank_configurations(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    set: &ConfigurationSet,
) -> Result<ConfigRanking> {
    let scores: Result<Vec<ConfigScore>> = set
        .members()
        .par_iter()
        .map(|c| criterion(y_obs, mask, c))
        .collect();
    Ok(ConfigRanking::from_scores(scores?))
}

/// Head of the ranking.
pub fn select_configuration(
    y_obs: &DenseMatrix,
    mask: &ObservationMask,
    set: &ConfigurationSet,
) -> Result<Configuration> {
    if set.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let ranking = rank_configurations(y_obs, mask, set)?;
    ranking
        .best()
        .map(|s| s.config)
        .ok_or(Error::EmptyCandidateSet)
}
