//! Analog multiple-access uplink.
//!
//! Clients transmit their `k` selected gradient entries simultaneously; the
//! server receives the fading-weighted sum plus noise, scaled by `1/N`.
//! Fading is a real nonnegative Rayleigh envelope (no phase, no CSI, no power
//! control) and the noise is Gaussian.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ChannelError;
use crate::selection::SelectionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Fading-weighted superposition plus additive noise.
    Analog,
    /// One-bit sign transmission with per-entry majority vote.
    #[serde(rename = "one_bit_mv")]
    OneBitMv,
    /// Fading-weighted superposition without noise.
    Noiseless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    Rayleigh,
    #[serde(rename = "unit")]
    UnitGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub mode: ChannelMode,
    pub fading: FadingKind,
    /// Mean fading gain.
    pub mu_c: f64,
    /// Noise variance per subcarrier.
    pub sigma_z2: f64,
    /// Per-entry sign-flip probability in one-bit mode.
    pub p_flip: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            mode: ChannelMode::Analog,
            fading: FadingKind::Rayleigh,
            mu_c: 1.0,
            sigma_z2: 1.0,
            p_flip: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn noiseless_unit() -> Self {
        ChannelParams {
            mode: ChannelMode::Noiseless,
            fading: FadingKind::UnitGain,
            mu_c: 1.0,
            sigma_z2: 0.0,
            p_flip: 0.0,
        }
    }

    /// Variance of the fading gain: `μ_c²(4/π − 1)` for a Rayleigh envelope
    /// with mean `μ_c`, zero for unit gain.
    pub fn sigma_c2(&self) -> f64 {
        match self.fading {
            FadingKind::Rayleigh => self.mu_c * self.mu_c * (4.0 / std::f64::consts::PI - 1.0),
            FadingKind::UnitGain => 0.0,
        }
    }

    /// Noise variance that actually reaches the server (zero when noiseless).
    pub fn effective_sigma_z2(&self) -> f64 {
        match self.mode {
            ChannelMode::Analog => self.sigma_z2,
            ChannelMode::OneBitMv | ChannelMode::Noiseless => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let mut why = Vec::new();
        if !(self.mu_c > 0.0 && self.mu_c.is_finite()) {
            why.push(format!("mu_c must be positive and finite, got {}", self.mu_c));
        }
        if !(self.sigma_z2 >= 0.0 && self.sigma_z2.is_finite()) {
            why.push(format!(
                "sigma_z2 must be a finite nonnegative variance, got {}",
                self.sigma_z2
            ));
        }
        if !(0.0..=1.0).contains(&self.p_flip) {
            why.push(format!("p_flip must lie in [0, 1], got {}", self.p_flip));
        }
        if why.is_empty() {
            Ok(())
        } else {
            Err(ChannelError::InvalidParams(why.join("; ")))
        }
    }
}

/// Draws one fading gain per client. Rayleigh amplitudes use scale
/// `μ_c / √(π/2)` so that their mean is `μ_c`.
pub fn sample_fading<R: rand::Rng + ?Sized>(params: &ChannelParams, n: usize, rng: &mut R) -> Vec<f64> {
    match params.fading {
        FadingKind::UnitGain => vec![params.mu_c; n],
        FadingKind::Rayleigh => {
            let scale = params.mu_c / (std::f64::consts::PI / 2.0).sqrt();
            (0..n)
                .map(|_| {
                    // 1 - U lies in (0, 1], so the log is finite.
                    let u: f64 = rng.random();
                    scale * (-2.0 * (1.0 - u).ln()).sqrt()
                })
                .collect()
        }
    }
}

/// `(1/N)(Σ_n h_n · payload_n + ξ)`, reducing clients in ascending order.
/// The noise vector is drawn in every mode that carries it, one sample per
/// entry.
pub fn oac_aggregate<R: rand::Rng + ?Sized>(
    payloads: &[Vec<f64>],
    h: &[f64],
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<f64>, ChannelError> {
    if payloads.is_empty() {
        return Err(ChannelError::Aggregation("no client payloads".into()));
    }
    if h.len() != payloads.len() {
        return Err(ChannelError::Aggregation(format!(
            "{} gains for {} clients",
            h.len(),
            payloads.len()
        )));
    }
    let k = payloads[0].len();
    if let Some(bad) = payloads.iter().position(|p| p.len() != k) {
        return Err(ChannelError::Aggregation(format!(
            "payload {bad} has length {}, expected {k}",
            payloads[bad].len()
        )));
    }
    let mut sum = vec![0.0; k];
    for (payload, &gain) in payloads.iter().zip(h) {
        for (s, &x) in sum.iter_mut().zip(payload) {
            *s += gain * x;
        }
    }
    if params.mode == ChannelMode::Analog && params.sigma_z2 > 0.0 {
        let noise = Normal::new(0.0, params.sigma_z2.sqrt())
            .map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
        for s in sum.iter_mut() {
            *s += noise.sample(rng);
        }
    }
    let n = payloads.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Majority vote over client signs, entry by entry. Ties go to `+1`; each
/// output sign is then flipped independently with probability `p_flip`.
pub fn one_bit_mv_aggregate<R: rand::Rng + ?Sized>(
    payloads: &[Vec<f64>],
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<f64>, ChannelError> {
    if payloads.is_empty() {
        return Err(ChannelError::Aggregation("no client payloads".into()));
    }
    let k = payloads[0].len();
    if payloads.iter().any(|p| p.len() != k) {
        return Err(ChannelError::Aggregation("payload lengths differ".into()));
    }
    let mut votes = vec![0i64; k];
    for payload in payloads {
        for (v, &x) in votes.iter_mut().zip(payload) {
            *v += if x >= 0.0 { 1 } else { -1 };
        }
    }
    Ok(votes
        .into_iter()
        .map(|v| {
            let sign = if v >= 0 { 1.0 } else { -1.0 };
            if params.p_flip > 0.0 && rng.random::<f64>() < params.p_flip {
                -sign
            } else {
                sign
            }
        })
        .collect())
}

/// Splices the aggregated entries into the previous global gradient: the
/// selected positions take `agg` (in mask order), the rest keep `prev`.
pub fn reconstruct(
    prev: &[f64],
    mask: &SelectionMask,
    agg: &[f64],
) -> Result<Vec<f64>, ChannelError> {
    let selected = mask.count();
    if selected != agg.len() {
        return Err(ChannelError::Cardinality {
            selected,
            payload: agg.len(),
        });
    }
    if prev.len() != mask.len() {
        return Err(ChannelError::Aggregation(format!(
            "previous gradient has length {}, mask has {}",
            prev.len(),
            mask.len()
        )));
    }
    let mut out = prev.to_vec();
    for (i, &v) in mask.indices().into_iter().zip(agg) {
        out[i] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn unit_gain_fading() {
        let p = ChannelParams::noiseless_unit();
        assert_eq!(sample_fading(&p, 3, &mut stream(0, Stream::Fading)), vec![1.0; 3]);
    }

    #[test]
    fn rayleigh_moments() {
        let p = ChannelParams::default();
        let h = sample_fading(&p, 1_000_000, &mut stream(11, Stream::Fading));
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.997..=1.003).contains(&mean), "mean {mean}");
        let target = 4.0 / std::f64::consts::PI - 1.0;
        assert!((var - target).abs() / target < 0.01, "var {var}");
        assert!((p.sigma_c2() - target).abs() < 1e-15);
    }

    #[test]
    fn fading_is_reproducible() {
        let p = ChannelParams::default();
        assert_eq!(
            sample_fading(&p, 8, &mut stream(5, Stream::Fading)),
            sample_fading(&p, 8, &mut stream(5, Stream::Fading))
        );
    }

    #[test]
    fn noiseless_aggregation() {
        let p = ChannelParams::noiseless_unit();
        let mut rng = stream(0, Stream::Noise);
        let out = oac_aggregate(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[1.0, 1.0], &p, &mut rng).unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
        let out = oac_aggregate(&[vec![1.0, -2.0]], &[0.7], &p, &mut rng).unwrap();
        assert_eq!(out, vec![0.7, -1.4]);
    }

    #[test]
    fn noise_variance_is_scaled_by_n_squared() {
        let p = ChannelParams {
            mode: ChannelMode::Analog,
            fading: FadingKind::UnitGain,
            mu_c: 1.0,
            sigma_z2: 1.0,
            p_flip: 0.0,
        };
        let n = 4;
        let trials = 10_000;
        let payloads = vec![vec![0.0; 3]; n];
        let h = vec![1.0; n];
        let mut rng = stream(3, Stream::Noise);
        let mut samples = Vec::with_capacity(trials * 3);
        for _ in 0..trials {
            samples.extend(oac_aggregate(&payloads, &h, &p, &mut rng).unwrap());
        }
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let target = 1.0 / (n * n) as f64;
        assert!((var - target).abs() / target < 0.05, "var {var}");
    }

    #[test]
    fn aggregation_rejects_mismatched_lengths() {
        let p = ChannelParams::noiseless_unit();
        let mut rng = stream(0, Stream::Noise);
        assert!(oac_aggregate(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 1.0], &p, &mut rng).is_err());
        assert!(oac_aggregate(&[vec![1.0]], &[1.0, 1.0], &p, &mut rng).is_err());
    }

    #[test]
    fn majority_vote() {
        let p = ChannelParams {
            mode: ChannelMode::OneBitMv,
            ..ChannelParams::default()
        };
        let mut rng = stream(0, Stream::BitFlip);
        let three = [vec![0.3], vec![2.0], vec![-1.0]];
        assert_eq!(one_bit_mv_aggregate(&three, &p, &mut rng).unwrap(), vec![1.0]);
        let tie = [vec![0.3], vec![-1.0]];
        assert_eq!(one_bit_mv_aggregate(&tie, &p, &mut rng).unwrap(), vec![1.0]);
        let single = [vec![-0.5, 0.2, -3.0]];
        assert_eq!(
            one_bit_mv_aggregate(&single, &p, &mut rng).unwrap(),
            vec![-1.0, 1.0, -1.0]
        );
        let always_flip = ChannelParams { p_flip: 1.0, ..p };
        assert_eq!(
            one_bit_mv_aggregate(&single, &always_flip, &mut rng).unwrap(),
            vec![1.0, -1.0, 1.0]
        );
    }

    #[test]
    fn reconstruct_examples() {
        let prev = [9.0, 9.0, 9.0];
        let mask = SelectionMask::from_indices(3, [0, 2]);
        assert_eq!(reconstruct(&prev, &mask, &[1.0, 3.0]).unwrap(), vec![1.0, 9.0, 3.0]);
        assert_eq!(
            reconstruct(&prev, &SelectionMask::ones(3), &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(reconstruct(&prev, &SelectionMask::zeros(3), &[]).unwrap(), prev.to_vec());
        assert_eq!(
            reconstruct(&prev, &mask, &[1.0]),
            Err(ChannelError::Cardinality { selected: 2, payload: 1 })
        );
    }

    #[test]
    fn validation() {
        let mut p = ChannelParams::default();
        assert!(p.validate().is_ok());
        p.mu_c = 0.0;
        p.sigma_z2 = f64::INFINITY;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("mu_c") && err.contains("sigma_z2"));
    }
}
