//! Exchange model and the sparse transition matrix over AoU-rank positions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MarkovError;

/// The random-exchange model of the magnitude-selected set.
///
/// Each round the `k_m` magnitude-selected entries swap `k0` members with the
/// `d - k_m` others, uniformly at random, which gives the per-entry
/// probabilities `p1 = k0 / k_m` (leave the set) and `p2 = k0 / (d - k_m)`
/// (join it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeModel {
    pub d: usize,
    pub k: usize,
    pub k_m: usize,
    pub k0: usize,
}

impl ExchangeModel {
    /// Validates every invariant the chain construction relies on:
    /// `0 < k0 < k_m`, `k_m <= k` and `k <= d / 2`.
    pub fn new(d: usize, k: usize, k_m: usize, k0: usize) -> Result<Self, MarkovError> {
        let m = Self::new_relaxed(d, k, k_m, k0)?;
        if 2 * k > d {
            return Err(MarkovError::InfeasibleModel(format!(
                "compression ratio k/d = {k}/{d} exceeds 1/2"
            )));
        }
        Ok(m)
    }

    /// Like [`ExchangeModel::new`] but without the `k <= d/2` restriction.
    /// The Monte-Carlo exchange process is well defined for any budget; only
    /// the analytic chain needs the restriction.
    pub fn new_relaxed(d: usize, k: usize, k_m: usize, k0: usize) -> Result<Self, MarkovError> {
        let mut why = Vec::new();
        if k_m > k {
            why.push(format!("k_m = {k_m} exceeds k = {k}"));
        }
        if k > d {
            why.push(format!("k = {k} exceeds d = {d}"));
        }
        if k0 == 0 || k0 >= k_m {
            why.push(format!("need 0 < k0 < k_m, got k0 = {k0}, k_m = {k_m}"));
        }
        if k_m < d && k0 >= d - k_m {
            why.push(format!("need k0 < d - k_m, got k0 = {k0}, d - k_m = {}", d - k_m));
        }
        if k_m >= d {
            why.push(format!("k_m = {k_m} leaves no unselected entries (d = {d})"));
        }
        if !why.is_empty() {
            return Err(MarkovError::InfeasibleModel(why.join("; ")));
        }
        Ok(ExchangeModel { d, k, k_m, k0 })
    }

    pub fn k_a(&self) -> usize {
        self.k - self.k_m
    }

    pub fn p1(&self) -> f64 {
        self.k0 as f64 / self.k_m as f64
    }

    pub fn p2(&self) -> f64 {
        self.k0 as f64 / (self.d - self.k_m) as f64
    }

    /// `⌈(d - k_m) / k_a⌉`, or `None` when `k_a = 0`.
    pub fn max_staleness(&self) -> Option<usize> {
        (self.k_a() > 0).then(|| (self.d - self.k_m).div_ceil(self.k_a()))
    }

    /// `k0 < k_m (d - k_m) / d`, the regime in which magnitude-selected
    /// entries are more likely to stay selected than others are to join.
    pub fn in_persistence_regime(&self) -> bool {
        self.k0 * self.d < self.k_m * (self.d - self.k_m)
    }

    /// Position (0-based) representing the age-selected set.
    pub fn age_state(&self) -> usize {
        0
    }

    /// Position (0-based) representing the magnitude-selected set.
    pub fn magnitude_state(&self) -> usize {
        self.k_a()
    }

    /// First unselected position (0-based).
    pub fn first_unselected_state(&self) -> usize {
        self.k
    }
}

/// Row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds a matrix from per-row `(column, probability)` lists and checks
    /// that it is row-stochastic to 1e-12.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self, MarkovError> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let mut sum = 0.0;
            for (c, v) in row {
                if c >= n || !(0.0..=1.0).contains(&v) {
                    return Err(MarkovError::InfeasibleModel(format!(
                        "row {r}: entry ({c}, {v}) out of range"
                    )));
                }
                sum += v;
                cols.push(c);
                vals.push(v);
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(MarkovError::NotStochastic { row: r, sum });
            }
            row_ptr.push(cols.len());
        }
        Ok(TransitionMatrix {
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `P[i][j]`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .filter(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// `out = v P`.
    pub fn left_mul_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[idx]] += vi * self.vals[idx];
            }
        }
    }

    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.left_mul_into(v, &mut out);
        out
    }
}

/// Natural-log binomial pmf terms `ln[C(n, j) a^j b^(n-j)]` for `j = 0..=upto`,
/// accumulated incrementally so nothing overflows for large `n`.
fn ln_binomial_terms(n: usize, upto: usize, ln_a: f64, ln_b: f64) -> Vec<f64> {
    let upto = upto.min(n);
    let mut out = Vec::with_capacity(upto + 1);
    let mut ln_choose = 0.0;
    for j in 0..=upto {
        if j > 0 {
            ln_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        out.push(ln_choose + j as f64 * ln_a + (n - j) as f64 * ln_b);
    }
    out
}

fn unselected_row(m: &ExchangeModel, r: usize) -> Vec<(usize, f64)> {
    let (d, k_a) = (m.d, m.k_a());
    let p2 = m.p2();
    let (ln_p, ln_q) = (p2.ln(), (1.0 - p2).ln());
    // 1-based position i = r + 1 has n = d - i entries with a larger age.
    let n = d - (r + 1);

    // Shift branch: ℓ older entries join the magnitude set and the k_a oldest
    // leave, so the position advances by k_a + ℓ (never past d).
    let mut targets: Vec<(usize, f64)> = Vec::new();
    if n >= k_a {
        let top = m.k0.min(n - k_a);
        for (l, lw) in ln_binomial_terms(n, top, ln_p, ln_q).into_iter().enumerate() {
            targets.push((r + k_a + l, lw));
        }
    }
    // Age-selection branch: at least n - k_a of the older entries are taken
    // by magnitude, so this entry is among the k_a oldest that remain.
    // Sum over ℓ in [n - k_a, n], written as j = n - ℓ in [0, k_a].
    if k_a > 0 {
        let terms = ln_binomial_terms(n, k_a, ln_q, ln_p);
        let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ln_sum = hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln();
        targets.push((m.age_state(), ln_sum));
    }

    // The truncated branches are renormalised to carry 1 - p2 in total, so
    // the magnitude transition keeps exactly p2.
    let hi = targets
        .iter()
        .map(|&(_, lw)| lw)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = targets.iter().map(|&(_, lw)| (lw - hi).exp()).sum();
    let mut row = vec![(m.magnitude_state(), p2)];
    for (c, lw) in targets {
        let w = (1.0 - p2) * (lw - hi).exp() / total;
        if w > 0.0 {
            match row.iter_mut().find(|(col, _)| *col == c) {
                Some(slot) => slot.1 += w,
                None => row.push((c, w)),
            }
        }
    }
    row
}

/// Builds the transition matrix over AoU-ordered positions.
///
/// Position 0 stands for the whole age-selected set and position `k_a` for
/// the whole magnitude-selected set; positions inside those sets carry no
/// stationary mass and mirror their representative's row. Positions
/// `k..d` are the unselected entries in ascending age.
pub fn build_transition_matrix(m: &ExchangeModel) -> Result<TransitionMatrix, MarkovError> {
    let m = ExchangeModel::new(m.d, m.k, m.k_m, m.k0)?;
    let (p1, p2) = (m.p1(), m.p2());
    let k_a = m.k_a();
    let rows: Vec<Vec<(usize, f64)>> = (0..m.d)
        .into_par_iter()
        .map(|r| {
            if r < k_a {
                vec![(m.magnitude_state(), p2), (m.first_unselected_state(), 1.0 - p2)]
            } else if r < m.k {
                vec![(m.magnitude_state(), 1.0 - p1), (m.first_unselected_state(), p1)]
            } else {
                unselected_row(&m, r)
            }
        })
        .collect();
    TransitionMatrix::from_rows(rows)
}
