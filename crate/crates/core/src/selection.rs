//! Gradient-entry selection policies and Age-of-Update bookkeeping.
//!
//! Every policy returns a dense [`SelectionMask`] with exactly `k` ones.
//! Ties on magnitude or on age are always broken in favour of the lower
//! index, so all deterministic policies are pure functions of their inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::SelectionError;

/// Binary k-hot selection over the model dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionMask(Vec<bool>);

impl SelectionMask {
    pub fn zeros(dim: usize) -> Self {
        SelectionMask(vec![false; dim])
    }

    pub fn ones(dim: usize) -> Self {
        SelectionMask(vec![true; dim])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        SelectionMask(bits)
    }

    /// Mask with ones exactly at `indices`.
    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; dim];
        for i in indices {
            bits[i] = true;
        }
        SelectionMask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Selected positions in ascending order. This is the "mask order" used
    /// to pack and unpack sparse payloads.
    pub fn indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Keeps the selected entries of `x` in mask order.
    pub fn pack(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.len());
        self.0
            .iter()
            .zip(x)
            .filter_map(|(&b, &v)| b.then_some(v))
            .collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-entry Age of Update, in communication rounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AoUVector(Vec<u64>);

impl AoUVector {
    pub fn zeros(dim: usize) -> Self {
        AoUVector(vec![0; dim])
    }

    pub fn from_ages(ages: Vec<u64>) -> Self {
        AoUVector(ages)
    }

    pub fn ages(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|&a| a as f64).sum::<f64>() / self.0.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FairK,
    TopK,
    RoundRobin,
    TopRand,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::FairK,
        PolicyKind::TopK,
        PolicyKind::RoundRobin,
        PolicyKind::TopRand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::FairK => "fair_k",
            PolicyKind::TopK => "top_k",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::TopRand => "top_rand",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fair_k" => Ok(PolicyKind::FairK),
            "top_k" => Ok(PolicyKind::TopK),
            "round_robin" => Ok(PolicyKind::RoundRobin),
            "top_rand" => Ok(PolicyKind::TopRand),
            other => Err(format!(
                "unknown policy `{other}` (expected fair_k, top_k, round_robin or top_rand)"
            )),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which policy to run and how its budget `k` is split. `k_m` magnitude
/// slots are filled first; the remaining `k_a = k - k_m` slots are filled by
/// age (FAIR-k) or uniformly at random (TopRand). Top-k and round robin
/// ignore `k_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub k: usize,
    pub k_m: usize,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, k: usize, k_m: usize) -> Result<Self, SelectionError> {
        if k_m > k {
            return Err(SelectionError::InvalidSplit { k, k_m });
        }
        Ok(PolicyConfig { kind, k, k_m })
    }

    pub fn k_a(&self) -> usize {
        self.k - self.k_m
    }

    pub fn validate(&self, dim: usize) -> Result<(), SelectionError> {
        if self.k > dim {
            return Err(SelectionError::InvalidBudget { k: self.k, dim });
        }
        if self.k_m > self.k {
            return Err(SelectionError::InvalidSplit {
                k: self.k,
                k_m: self.k_m,
            });
        }
        Ok(())
    }

    /// Runs the configured policy. `rng` is only consumed by TopRand.
    pub fn select<R: rand::Rng + ?Sized>(
        &self,
        g: &[f64],
        aou: &AoUVector,
        rng: &mut R,
    ) -> Result<SelectionMask, SelectionError> {
        match self.kind {
            PolicyKind::FairK => fair_k(g, aou, self),
            PolicyKind::TopK => top_mask(g, self.k),
            PolicyKind::RoundRobin => round_robin(aou, self.k),
            PolicyKind::TopRand => top_rand(g, self, rng),
        }
    }
}

/// Picks `k` positions out of `candidates` that are greatest under `cmp`,
/// where `cmp` is a strict total order (ties already resolved by index).
fn top_by<F>(mut candidates: Vec<usize>, k: usize, cmp: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> Ordering,
{
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| cmp(a, b));
        candidates.truncate(k);
    }
    candidates
}

fn by_magnitude(x: &[f64]) -> impl Fn(usize, usize) -> Ordering + '_ {
    move |a, b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b))
}

fn by_age(ages: &[u64]) -> impl Fn(usize, usize) -> Ordering + '_ {
    move |a, b| ages[b].cmp(&ages[a]).then(a.cmp(&b))
}

fn check_budget(k: usize, dim: usize) -> Result<(), SelectionError> {
    if k > dim {
        Err(SelectionError::InvalidBudget { k, dim })
    } else {
        Ok(())
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), SelectionError> {
    if got != expected {
        Err(SelectionError::LengthMismatch {
            what,
            got,
            expected,
        })
    } else {
        Ok(())
    }
}

/// The `Top(x, k)` operator: ones at the `k` largest `|x_i|`.
pub fn top_mask(x: &[f64], k: usize) -> Result<SelectionMask, SelectionError> {
    check_budget(k, x.len())?;
    let picked = top_by((0..x.len()).collect(), k, by_magnitude(x));
    Ok(SelectionMask::from_indices(x.len(), picked))
}

/// The `k` oldest entries.
pub fn round_robin(aou: &AoUVector, k: usize) -> Result<SelectionMask, SelectionError> {
    check_budget(k, aou.len())?;
    let picked = top_by((0..aou.len()).collect(), k, by_age(aou.ages()));
    Ok(SelectionMask::from_indices(aou.len(), picked))
}

/// FAIR-k: the `k_m` largest-magnitude entries, then the `k_a` oldest among
/// the rest. The two stages never overlap, so the mask always has `k` ones.
pub fn fair_k(
    g: &[f64],
    aou: &AoUVector,
    cfg: &PolicyConfig,
) -> Result<SelectionMask, SelectionError> {
    check_len("AoU vector", aou.len(), g.len())?;
    cfg.validate(g.len())?;
    let mut mask = top_mask(g, cfg.k_m)?;
    let rest: Vec<usize> = (0..g.len()).filter(|&i| !mask.get(i)).collect();
    for i in top_by(rest, cfg.k_a(), by_age(aou.ages())) {
        mask.0[i] = true;
    }
    Ok(mask)
}

/// TopRand: the `k_m` largest-magnitude entries plus `k_a` entries drawn
/// uniformly without replacement from the rest.
pub fn top_rand<R: rand::Rng + ?Sized>(
    g: &[f64],
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Result<SelectionMask, SelectionError> {
    cfg.validate(g.len())?;
    let mut mask = top_mask(g, cfg.k_m)?;
    let k_a = cfg.k_a();
    if k_a == 0 {
        return Ok(mask);
    }
    let rest: Vec<usize> = (0..g.len()).filter(|&i| !mask.get(i)).collect();
    // Partial Fisher-Yates over the remaining indices.
    let mut pool = rest;
    for slot in 0..k_a {
        let j = rng.random_range(slot..pool.len());
        pool.swap(slot, j);
        mask.0[pool[slot]] = true;
    }
    Ok(mask)
}

/// `A' = (A + 1) ⊙ (1 - S)`.
pub fn aou_update(aou: &AoUVector, mask: &SelectionMask) -> Result<AoUVector, SelectionError> {
    check_len("selection mask", mask.len(), aou.len())?;
    Ok(AoUVector(
        aou.0
            .iter()
            .zip(mask.bits())
            .map(|(&a, &s)| if s { 0 } else { a + 1 })
            .collect(),
    ))
}

/// `⌈(d - k_m) / k_a⌉`, the largest age FAIR-k can produce; `None` when
/// `k_a = 0`.
pub fn max_staleness(d: usize, k_m: usize, k_a: usize) -> Option<u64> {
    (k_a > 0).then(|| (d - k_m).div_ceil(k_a) as u64)
}
