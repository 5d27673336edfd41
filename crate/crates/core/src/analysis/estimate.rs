//! Sampled estimates of the smoothness and heterogeneity constants.
//!
//! The Lipschitz-type estimators return the largest ratio observed over
//! sampled points, so they are lower estimates of the true constants.
//! Points are organised in chains: the first displacement of a chain is a
//! uniform random direction, each later one is the normalised gradient
//! difference produced by the previous pair. For a quadratic this is power
//! iteration on the Hessian, so the sampled maximum approaches the true
//! constant quickly even in moderate dimension.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{all_grads, Objective};
use crate::error::AnalysisError;
use crate::rng::{substream, Rng, Stream};

/// Pairs (or tuples) evaluated per chain.
pub const CHAIN_LEN: usize = 50;

/// Smallest accepted `num_pairs` for the Lipschitz estimators.
pub const MIN_PAIRS: usize = 100;

/// Mini-batches drawn per sampled point by the variance and norm estimators.
pub const BATCHES_PER_POINT: usize = 16;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `center + radius · u` for a uniform unit `u`; `center` empty means zero.
fn perturbed(center: &[f64], d: usize, radius: f64, rng: &mut Rng) -> Vec<f64> {
    let u = random_unit(d, rng);
    (0..d)
        .map(|i| center.get(i).copied().unwrap_or(0.0) + radius * u[i])
        .collect()
}

fn check_common(obj: &dyn Objective, center: &[f64], radius: f64) -> Result<(), AnalysisError> {
    if !center.is_empty() && center.len() != obj.dim() {
        return Err(AnalysisError::InvalidArgument(format!(
            "center has length {}, objective has dimension {}",
            center.len(),
            obj.dim()
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if obj.num_clients() == 0 {
        return Err(AnalysisError::InvalidArgument("objective has no clients".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest `‖∇f(w) − ∇f(v)‖ / ‖w − v‖` seen.
    pub l_g: f64,
    /// Largest `‖∇f_n(w) − ∇f_n(v)‖ / ‖w − v‖` over clients and pairs.
    pub l_tilde: f64,
    pub per_client: Vec<f64>,
    pub pairs: usize,
    pub skipped: usize,
}

/// Which gradient difference steers the next displacement of a chain.
#[derive(Clone, Copy)]
enum Driver {
    Global,
    Client(usize),
}

struct ChainResult {
    l_g: f64,
    per_client: Vec<f64>,
    pairs: usize,
    skipped: usize,
}

fn lipschitz_chain(
    obj: &dyn Objective,
    center: &[f64],
    radius: f64,
    pairs: usize,
    driver: Driver,
    rng: &mut Rng,
) -> ChainResult {
    let d = obj.dim();
    let n = obj.num_clients();
    let w = perturbed(center, d, radius, rng);
    let (gw, mean_w) = all_grads(obj, &w);
    let mut u = random_unit(d, rng);
    let mut out = ChainResult { l_g: 0.0, per_client: vec![0.0; n], pairs: 0, skipped: 0 };
    for _ in 0..pairs {
        let v: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a + radius * b).collect();
        let gap = dist(&w, &v);
        if gap == 0.0 {
            out.skipped += 1;
            u = random_unit(d, rng);
            continue;
        }
        let (gv, mean_v) = all_grads(obj, &v);
        let diff: Vec<f64> = mean_v.iter().zip(&mean_w).map(|(a, b)| a - b).collect();
        out.l_g = out.l_g.max(norm(&diff) / gap);
        let mut steer = None;
        for c in 0..n {
            let dc: Vec<f64> = gv[c].iter().zip(&gw[c]).map(|(a, b)| a - b).collect();
            out.per_client[c] = out.per_client[c].max(norm(&dc) / gap);
            if matches!(driver, Driver::Client(k) if k == c) {
                steer = Some(dc);
            }
        }
        let steer = steer.unwrap_or(diff);
        let s = norm(&steer);
        u = if s > 0.0 && s.is_finite() {
            steer.into_iter().map(|x| x / s).collect()
        } else {
            random_unit(d, rng)
        };
        out.pairs += 1;
    }
    out
}

fn run_lipschitz(
    obj: &dyn Objective,
    center: &[f64],
    num_pairs: usize,
    radius: f64,
    seed: u64,
    per_client_chains: bool,
) -> Result<LipschitzEstimate, AnalysisError> {
    check_common(obj, center, radius)?;
    if num_pairs < MIN_PAIRS {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least {MIN_PAIRS} pairs, got {num_pairs}"
        )));
    }
    let n = obj.num_clients();
    let chains = num_pairs.div_ceil(CHAIN_LEN);
    let results: Vec<ChainResult> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let len = CHAIN_LEN.min(num_pairs - c * CHAIN_LEN);
            // Chains cycle through the global objective and each client.
            let driver = match c % (n + 1) {
                0 => Driver::Global,
                k if per_client_chains => Driver::Client(k - 1),
                _ => Driver::Global,
            };
            let mut rng = substream(seed, Stream::Estimator, c as u64);
            lipschitz_chain(obj, center, radius, len, driver, &mut rng)
        })
        .collect();
    let mut est = LipschitzEstimate {
        l_g: 0.0,
        l_tilde: 0.0,
        per_client: vec![0.0; n],
        pairs: 0,
        skipped: 0,
    };
    for r in results {
        est.l_g = est.l_g.max(r.l_g);
        for (a, b) in est.per_client.iter_mut().zip(&r.per_client) {
            *a = a.max(*b);
        }
        est.pairs += r.pairs;
        est.skipped += r.skipped;
    }
    est.l_tilde = est.per_client.iter().copied().fold(0.0, f64::max);
    Ok(est)
}

/// Lower estimate of `L_g`, the Lipschitz constant of `∇f`, from
/// `num_pairs` pairs `(w, w + radius·u)` with `w` within `radius` of
/// `center` (empty `center` means the origin).
pub fn estimate_lg(
    obj: &dyn Objective,
    center: &[f64],
    num_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, AnalysisError> {
    Ok(run_lipschitz(obj, center, num_pairs, radius, seed, false)?.l_g)
}

/// Lower estimate of `L̃`, the common Lipschitz constant of every `∇f_n`.
/// Chains are steered alternately by the global gradient and by each client,
/// and every pair is scored for every client, so the result is never below
/// the `L_g` ratio of the same pairs.
pub fn estimate_ltilde(
    obj: &dyn Objective,
    center: &[f64],
    num_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<LipschitzEstimate, AnalysisError> {
    run_lipschitz(obj, center, num_pairs, radius, seed, true)
}

fn rms(deltas: &[Vec<f64>]) -> f64 {
    let total: f64 = deltas.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum();
    (total / deltas.len() as f64).sqrt()
}

/// Centers `deltas` across clients and rescales them to root-mean-square
/// norm `spread`. Returns `false` if they are equal up to rounding.
fn normalize_tuple(deltas: &mut [Vec<f64>], spread: f64) -> bool {
    let n = deltas.len();
    let d = deltas[0].len();
    let before = rms(deltas);
    let mut mean = vec![0.0; d];
    for x in deltas.iter() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n as f64);
    }
    for x in deltas.iter_mut() {
        x.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let after = rms(deltas);
    if !(after > 1e-9 * before && after.is_finite()) {
        return false;
    }
    for x in deltas.iter_mut() {
        x.iter_mut().for_each(|v| *v *= spread / after);
    }
    true
}

/// Lower estimate of the pseudo-Lipschitz constant `L_h`:
/// the square root of the largest
/// `‖(1/N) Σ ∇f_n(w_n) − ∇f(w̄)‖² / ((1/N) Σ ‖w_n − w̄‖²)` over sampled
/// tuples with root-mean-square dispersion `spread` around a point near
/// `center`. After the first tuple of a chain, client `n` is displaced along
/// `∇f_n(w̄ + spread·r̂) − ∇f_n(w̄)`, where `r̂` is the normalised residual of
/// the previous tuple (mean removed across clients).
pub fn estimate_lh(
    obj: &dyn Objective,
    center: &[f64],
    num_samples: usize,
    spread: f64,
    seed: u64,
) -> Result<f64, AnalysisError> {
    check_common(obj, center, spread)?;
    let n = obj.num_clients();
    if n < 2 {
        return Err(AnalysisError::InvalidArgument("L_h needs at least two clients".into()));
    }
    if num_samples == 0 {
        return Err(AnalysisError::InvalidArgument("num_samples must be positive".into()));
    }
    let d = obj.dim();
    let chains = num_samples.div_ceil(CHAIN_LEN);
    let best: Vec<f64> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let len = CHAIN_LEN.min(num_samples - c * CHAIN_LEN);
            let mut rng = substream(seed, Stream::Estimator, c as u64);
            let base = perturbed(center, d, spread, &mut rng);
            let random_tuple = |rng: &mut Rng| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
                    .collect()
            };
            let mut deltas = random_tuple(&mut rng);
            let mut best = 0.0f64;
            for _ in 0..len {
                if !normalize_tuple(&mut deltas, spread) {
                    deltas = random_tuple(&mut rng);
                    continue;
                }
                let points: Vec<Vec<f64>> = deltas
                    .iter()
                    .map(|x| base.iter().zip(x).map(|(b, v)| b + v).collect())
                    .collect();
                let mut w_bar = vec![0.0; d];
                for p in &points {
                    w_bar.iter_mut().zip(p).for_each(|(m, v)| *m += v);
                }
                w_bar.iter_mut().for_each(|m| *m /= n as f64);
                let denom = points.iter().map(|p| dist(p, &w_bar).powi(2)).sum::<f64>() / n as f64;
                if denom <= (1e-9 * spread).powi(2) {
                    deltas = random_tuple(&mut rng);
                    continue;
                }
                let mut at_points = vec![0.0; d];
                let mut g = vec![0.0; d];
                for (k, p) in points.iter().enumerate() {
                    obj.client_grad(k, p, &mut g);
                    at_points.iter_mut().zip(&g).for_each(|(m, v)| *m += v);
                }
                at_points.iter_mut().for_each(|m| *m /= n as f64);
                let (at_bar_each, at_bar) = all_grads(obj, &w_bar);
                let resid: Vec<f64> = at_points.iter().zip(&at_bar).map(|(a, b)| a - b).collect();
                let r = norm(&resid);
                best = best.max(r * r / denom);
                if !(r > 0.0 && r.is_finite()) {
                    deltas = random_tuple(&mut rng);
                    continue;
                }
                let probe: Vec<f64> = w_bar.iter().zip(&resid).map(|(a, b)| a + spread * b / r).collect();
                deltas = (0..n)
                    .map(|k| {
                        obj.client_grad(k, &probe, &mut g);
                        g.iter().zip(&at_bar_each[k]).map(|(a, b)| a - b).collect()
                    })
                    .collect();
            }
            best
        })
        .collect();
    Ok(best.into_iter().fold(0.0, f64::max).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimates {
    /// Largest mean `‖∇f_n(w;θ) − ∇f_n(w)‖²` over sampled `(w, n)`.
    pub sigma_s2: f64,
    /// Largest `‖∇f_n(w) − ∇f(w)‖²` over sampled `w` and all `n`.
    pub sigma_g2: f64,
    /// Largest mean `‖∇f_n(w;θ)‖²` over sampled `(w, n)`.
    pub g2: f64,
    pub points: usize,
    pub batches_per_point: usize,
}

/// Estimates `σ_s²`, `σ_g²` and `G²` at `num_points` models drawn within
/// `radius` of `center`. Each point visits every client; the stochastic
/// quantities average [`BATCHES_PER_POINT`] mini-batches.
pub fn estimate_noise(
    obj: &dyn Objective,
    center: &[f64],
    num_points: usize,
    radius: f64,
    seed: u64,
) -> Result<NoiseEstimates, AnalysisError> {
    check_common(obj, center, radius)?;
    if num_points == 0 {
        return Err(AnalysisError::InvalidArgument("num_points must be positive".into()));
    }
    let d = obj.dim();
    let per_point: Vec<(f64, f64, f64)> = (0..num_points)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, Stream::Estimator, (1 << 20) + p as u64);
            let w = perturbed(center, d, radius, &mut rng);
            let (grads, mean) = all_grads(obj, &w);
            let (mut s2, mut gdiv, mut g2) = (0.0f64, 0.0f64, 0.0f64);
            let mut gb = vec![0.0; d];
            for (c, full) in grads.iter().enumerate() {
                gdiv = gdiv.max(dist(full, &mean).powi(2));
                let (mut var, mut sq) = (0.0, 0.0);
                for _ in 0..BATCHES_PER_POINT {
                    obj.client_batch_grad(c, &w, &mut rng, &mut gb);
                    var += dist(&gb, full).powi(2);
                    sq += norm(&gb).powi(2);
                }
                s2 = s2.max(var / BATCHES_PER_POINT as f64);
                g2 = g2.max(sq / BATCHES_PER_POINT as f64);
            }
            (s2, gdiv, g2)
        })
        .collect();
    let fold = |f: fn(&(f64, f64, f64)) -> f64| per_point.iter().map(f).fold(0.0, f64::max);
    Ok(NoiseEstimates {
        sigma_s2: fold(|t| t.0),
        sigma_g2: fold(|t| t.1),
        g2: fold(|t| t.2),
        points: num_points,
        batches_per_point: BATCHES_PER_POINT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::objective::QuadraticObjective;

    #[test]
    fn identity_gives_exactly_one() {
        let obj = QuadraticObjective::identity(6, 1);
        let l = estimate_lg(&obj, &[], 100, 0.5, 1).unwrap();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
    }

    #[test]
    fn shifted_clients_have_zero_lh() {
        let d = 4;
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        let c = vec![0.5, -1.0, 2.0, 0.25];
        let neg: Vec<f64> = c.iter().map(|x| -x).collect();
        let obj = QuadraticObjective::new(d, vec![(eye.clone(), c), (eye, neg)]);
        let v = estimate_lh(&obj, &[], 200, 1.0, 2).unwrap();
        assert!(v < 1e-6, "{v}");
        assert!(estimate_lh(&QuadraticObjective::identity(d, 3), &[], 200, 1.0, 2).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_bad_arguments() {
        let obj = QuadraticObjective::identity(3, 1);
        assert!(estimate_lg(&obj, &[], 99, 1.0, 0).is_err());
        assert!(estimate_lg(&obj, &[], 100, 0.0, 0).is_err());
        assert!(estimate_lg(&obj, &[1.0], 100, 1.0, 0).is_err());
        assert!(estimate_lh(&obj, &[], 100, 1.0, 0).is_err());
    }

    #[test]
    fn deterministic_noise_free_quadratic() {
        let obj = QuadraticObjective::identity(3, 2);
        let e = estimate_noise(&obj, &[], 5, 1.0, 3).unwrap();
        assert_eq!(e.sigma_s2, 0.0);
        assert_eq!(e.sigma_g2, 0.0);
        // ‖∇f_n(w)‖² = ‖w‖² ≤ radius² for w on the unit sphere.
        assert!((e.g2 - 1.0).abs() < 1e-12);
    }
}
