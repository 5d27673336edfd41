//! Markov model of entry positions under FAIR-k and the staleness law it
//! predicts.
//!
//! Entries are ranked by AoU in ascending order. After each round the `k_a`
//! age-selected entries and the `k_m` magnitude-selected entries sit at the
//! front with age zero; everything else is ordered behind them. The position
//! of a single entry then evolves as a Markov chain whose transition
//! probabilities follow from the random-exchange model of the magnitude set
//! ([`ExchangeModel`]). The stationary law of the chain together with a
//! first-passage recursion gives the distribution of the staleness τ
//! ([`aou_distribution`]); [`simulate_exchange_process`] simulates the same
//! exchange process entry by entry as an independent check.

mod chain;
mod distribution;
mod monte_carlo;

pub use chain::{build_transition_matrix, ExchangeModel, TransitionMatrix};
pub use distribution::{
    aou_distribution, expected_staleness, steady_state, steady_state_capped, AnalyticStaleness,
    StalenessDistribution, SteadyState, MAX_POWER_ITERATIONS, STEADY_STATE_TOL,
};
pub use monte_carlo::{simulate_exchange_process, MonteCarloStaleness, BURN_IN_FACTOR};

/// Builds the chain, solves its steady state and returns the analytic
/// staleness law in one call.
pub fn analyze(m: &ExchangeModel) -> Result<(TransitionMatrix, SteadyState, AnalyticStaleness), crate::error::MarkovError> {
    let p = build_transition_matrix(m)?;
    let ss = steady_state(&p, STEADY_STATE_TOL)?;
    let dist = aou_distribution(&p, &ss.pi, m)?;
    Ok((p, ss, dist))
}
