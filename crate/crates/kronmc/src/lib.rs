//! Stable matrix completion under a low Kronecker-rank signal.
//!
//! The signal matrix is modeled as a short sum of Kronecker products
//! `X = sum_i lambda_i A_i (x) B_i` at an unknown dimension split
//! ("configuration"). The pipeline is:
//!
//! 1. enumerate candidate configurations ([`matrix::candidate_set`]),
//! 2. select the configuration maximizing the spectral norm of the
//!    rearranged zero-filled observations ([`config_select`]),
//! 3. complete the rearranged matrix by alternating least squares with a
//!    spectral initialization ([`als`]),
//! 4. optionally aggregate completions across the top-ranked
//!    configurations, with per-entry fallbacks for entries that are
//!    irrecoverable under the best configurations ([`aggregation`]).
//!
//! A simulation harness ([`sim`]) and a CLI (`kronmc`) drive synthetic
//! experiments and file-based completions.

pub mod aggregation;
pub mod als;
pub mod config_select;
pub mod error;
pub mod io;
pub mod matrix;
pub mod rng;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::{
    candidate_set, divisors, inverse_rearrange, kronecker_product, project, rearrange,
    rearrange_mask, vec_matrix, CandidateMode, Configuration, ConfigurationSet, DenseMatrix,
    ObservationMask,
};
