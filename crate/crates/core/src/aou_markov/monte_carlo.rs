//! Brute-force simulation of the exchange process, used as an independent
//! check of the analytic staleness law.

use rand::Rng as _;

use super::chain::ExchangeModel;
use super::distribution::StalenessDistribution;
use crate::error::MarkovError;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStaleness {
    /// Histogram of the AoU of every entry over every recorded round.
    pub distribution: StalenessDistribution,
    pub recorded_rounds: usize,
    pub burn_in: usize,
    /// Number of (entry, round) age samples.
    pub entry_rounds: u64,
    /// Number of refreshes (k per recorded round).
    pub refresh_events: u64,
    pub max_age: u64,
}

/// Rounds discarded before recording, as a multiple of the maximum staleness.
pub const BURN_IN_FACTOR: usize = 5;

/// Simulates `d` labelled entries for `rounds` rounds.
///
/// Each round swaps `k0` uniformly chosen members of the magnitude set with
/// `k0` uniformly chosen outsiders, selects the `k_a` oldest outsiders
/// (lower index first on ties), records the current age of every entry, and
/// then applies `A ← (A + 1) ⊙ (1 − S)`. The first `5·T` rounds are burn-in,
/// so `rounds` must be at least `10·T`.
pub fn simulate_exchange_process(
    m: &ExchangeModel,
    rounds: usize,
    seed: u64,
) -> Result<MonteCarloStaleness, MarkovError> {
    let horizon = m.max_staleness().ok_or(MarkovError::UnboundedStaleness)?;
    let min = 10 * horizon;
    if rounds < min {
        return Err(MarkovError::TooFewRounds { rounds, min });
    }
    let burn_in = BURN_IN_FACTOR * horizon;
    let (d, k_m, k0, k_a) = (m.d, m.k_m, m.k0, m.k_a());
    let mut rng = rng::stream(seed, Stream::MonteCarlo);

    // Random initial magnitude set.
    let mut order: Vec<usize> = (0..d).collect();
    for i in 0..k_m {
        let j = rng.random_range(i..d);
        order.swap(i, j);
    }
    let mut inside: Vec<usize> = order[..k_m].to_vec();
    let mut outside: Vec<usize> = order[k_m..].to_vec();
    let mut in_magnitude = vec![false; d];
    for &i in &inside {
        in_magnitude[i] = true;
    }

    let mut ages = vec![0u64; d];
    let mut refreshed = vec![false; d];
    let mut counts: Vec<u64> = vec![0; horizon + 2];
    let mut scratch = Vec::with_capacity(d);
    let mut max_age = 0;

    for round in 0..rounds {
        // Exchange k0 members each way: partial shuffles pick the positions.
        for slot in 0..k0 {
            let a = rng.random_range(slot..inside.len());
            inside.swap(slot, a);
            let b = rng.random_range(slot..outside.len());
            outside.swap(slot, b);
        }
        for slot in 0..k0 {
            std::mem::swap(&mut inside[slot], &mut outside[slot]);
            in_magnitude[inside[slot]] = true;
            in_magnitude[outside[slot]] = false;
        }

        // Oldest k_a outsiders.
        refreshed.copy_from_slice(&in_magnitude);
        scratch.clear();
        scratch.extend_from_slice(&outside);
        if k_a < scratch.len() {
            scratch.select_nth_unstable_by(k_a - 1, |&a, &b| {
                ages[b].cmp(&ages[a]).then(a.cmp(&b))
            });
        }
        for &i in scratch.iter().take(k_a) {
            refreshed[i] = true;
        }

        if round >= burn_in {
            for &a in &ages {
                let a = a as usize;
                if a >= counts.len() {
                    counts.resize(a + 1, 0);
                }
                counts[a] += 1;
            }
        }
        for (a, &hit) in ages.iter_mut().zip(&refreshed) {
            *a = if hit { 0 } else { *a + 1 };
            max_age = max_age.max(*a);
        }
    }

    let recorded_rounds = rounds - burn_in;
    Ok(MonteCarloStaleness {
        distribution: StalenessDistribution::from_counts(&counts)?,
        recorded_rounds,
        burn_in,
        entry_rounds: (recorded_rounds * d) as u64,
        refresh_events: (recorded_rounds * m.k) as u64,
        max_age,
    })
}
