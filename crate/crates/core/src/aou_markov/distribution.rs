//! Steady state of the position chain and the staleness law it induces.

use serde::{Deserialize, Serialize};

use super::chain::{ExchangeModel, TransitionMatrix};
use crate::error::MarkovError;

/// Default fixed-point tolerance for [`steady_state`].
pub const STEADY_STATE_TOL: f64 = 1e-12;
/// Iteration cap for [`steady_state`].
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub pi: Vec<f64>,
    /// `‖πP − π‖₁` at termination.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `π = πP` by power iteration from the uniform vector.
pub fn steady_state(p: &TransitionMatrix, tol: f64) -> Result<SteadyState, MarkovError> {
    steady_state_capped(p, tol, MAX_POWER_ITERATIONS)
}

pub fn steady_state_capped(
    p: &TransitionMatrix,
    tol: f64,
    max_iterations: usize,
) -> Result<SteadyState, MarkovError> {
    let n = p.dim();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iterations {
        p.left_mul_into(&pi, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            // Report the residual of the vector actually returned.
            p.left_mul_into(&pi, &mut next);
            let residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            return Ok(SteadyState {
                pi,
                residual,
                iterations: it,
            });
        }
    }
    Err(MarkovError::NoConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// Probability law of the staleness τ over `l = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessDistribution {
    pub q: Vec<f64>,
    pub mean: f64,
}

impl StalenessDistribution {
    /// Wraps a probability vector; rejects negative entries and a total that
    /// is off from 1 by more than 1e-9.
    pub fn new(q: Vec<f64>) -> Result<Self, MarkovError> {
        if let Some(l) = q.iter().position(|&x| x.is_nan() || x < 0.0) {
            return Err(MarkovError::InfeasibleModel(format!(
                "staleness probability q[{l}] = {} is negative",
                q[l]
            )));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MarkovError::InfeasibleModel(format!(
                "staleness probabilities sum to {total}"
            )));
        }
        let mean = q.iter().enumerate().map(|(l, &x)| l as f64 * x).sum();
        Ok(StalenessDistribution { q, mean })
    }

    /// Normalises a histogram of counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self, MarkovError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(MarkovError::InfeasibleModel("empty histogram".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn point_mass(l: usize) -> Self {
        let mut q = vec![0.0; l + 1];
        q[l] = 1.0;
        StalenessDistribution { q, mean: l as f64 }
    }

    pub fn prob(&self, l: usize) -> f64 {
        self.q.get(l).copied().unwrap_or(0.0)
    }

    /// Largest `l` with nonzero probability.
    pub fn support_max(&self) -> usize {
        self.q.iter().rposition(|&x| x > 0.0).unwrap_or(0)
    }

    pub fn mass_beyond(&self, l: usize) -> f64 {
        self.q.iter().skip(l + 1).sum()
    }

    /// `½ Σ |q_l − r_l|`.
    pub fn total_variation(&self, other: &StalenessDistribution) -> f64 {
        let n = self.q.len().max(other.q.len());
        0.5 * (0..n)
            .map(|l| (self.prob(l) - other.prob(l)).abs())
            .sum::<f64>()
    }
}

/// `E[τ] = Σ l q_l`.
pub fn expected_staleness(q: &StalenessDistribution) -> f64 {
    q.q.iter().enumerate().map(|(l, &x)| l as f64 * x).sum()
}

/// Staleness law predicted by the chain, with support `0..=max_staleness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticStaleness {
    pub distribution: StalenessDistribution,
    pub max_staleness: usize,
    /// Probability of not having been refreshed after `max_staleness + 1`
    /// steps; zero for every valid model, kept as a diagnostic.
    pub truncated_mass: f64,
}

/// First-passage law into the refreshed states.
///
/// `q_l = Σ_i π_i [(P̂^l P)_{i,0} + (P̂^l P)_{i,k_a}]` where `P̂` is `P` with
/// the two refreshed-state columns zeroed; `P̂⁰` is the identity, so
/// `q_0 = Σ_i π_i (P_{i,0} + P_{i,k_a})`. Each step is one censored
/// vector-matrix product.
pub fn aou_distribution(
    p: &TransitionMatrix,
    pi: &[f64],
    m: &ExchangeModel,
) -> Result<AnalyticStaleness, MarkovError> {
    let horizon = m.max_staleness().ok_or(MarkovError::UnboundedStaleness)?;
    if p.dim() != m.d || pi.len() != m.d {
        return Err(MarkovError::InfeasibleModel(format!(
            "dimension mismatch: matrix {}, steady state {}, model d = {}",
            p.dim(),
            pi.len(),
            m.d
        )));
    }
    let (age, mag) = (m.age_state(), m.magnitude_state());
    let mut v = pi.to_vec();
    let mut next = vec![0.0; m.d];
    let mut q = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        p.left_mul_into(&v, &mut next);
        q.push(next[age] + next[mag]);
        next[age] = 0.0;
        next[mag] = 0.0;
        std::mem::swap(&mut v, &mut next);
    }
    let truncated_mass = v.iter().sum::<f64>().max(0.0);
    Ok(AnalyticStaleness {
        distribution: StalenessDistribution::new(q)?,
        max_staleness: horizon,
        truncated_mass,
    })
}
