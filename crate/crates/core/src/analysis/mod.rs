//! Empirical smoothness and heterogeneity constants, and numeric evaluation
//! of the convergence bounds they feed.

mod bounds;
mod estimate;
mod objective;

pub use bounds::{
    lemma2_bound, lemma2_series, theorem1_bound, BoundOptions, BoundReport, BoundTerms,
    ConvergenceConstants,
};
pub use estimate::{
    estimate_lg, estimate_lh, estimate_ltilde, estimate_noise, LipschitzEstimate, NoiseEstimates,
    BATCHES_PER_POINT, CHAIN_LEN, MIN_PAIRS,
};
pub use objective::{FederatedObjective, Objective, QuadraticObjective};
