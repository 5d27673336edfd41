//! Numeric evaluation of the FAIR-k convergence bound and the
//! reconstructed-gradient bound.

use serde::{Deserialize, Serialize};

use crate::aou_markov::StalenessDistribution;
use crate::error::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    pub l_g: f64,
    pub l_h: f64,
    pub l_tilde: f64,
    pub sigma_s2: f64,
    pub sigma_g2: f64,
    pub g2: f64,
    pub mu_c: f64,
    pub sigma_c2: f64,
    pub sigma_z2: f64,
    pub d: usize,
    pub n: usize,
    pub h: usize,
    pub eta: f64,
    pub eta_l: f64,
    pub e_tau: f64,
    /// `f(w₀) − f(w*)`.
    pub f_gap: f64,
    /// Number of rounds `T`; may be infinite.
    pub t_rounds: f64,
}

impl ConvergenceConstants {
    fn check(&self) -> Result<(), AnalysisError> {
        let reals = [
            ("l_g", self.l_g),
            ("l_h", self.l_h),
            ("l_tilde", self.l_tilde),
            ("sigma_s2", self.sigma_s2),
            ("sigma_g2", self.sigma_g2),
            ("g2", self.g2),
            ("mu_c", self.mu_c),
            ("sigma_c2", self.sigma_c2),
            ("sigma_z2", self.sigma_z2),
            ("eta", self.eta),
            ("eta_l", self.eta_l),
            ("e_tau", self.e_tau),
            ("f_gap", self.f_gap),
            ("t_rounds", self.t_rounds),
        ];
        let mut bad: Vec<String> = reals
            .iter()
            .filter(|(_, v)| v.is_nan() || *v < 0.0 || (v.is_infinite() && *v != self.t_rounds))
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        if self.n == 0 {
            bad.push("n = 0".into());
        }
        if self.h == 0 {
            bad.push("h = 0".into());
        }
        if self.mu_c == 0.0 {
            bad.push("mu_c must be positive".into());
        }
        if self.eta == 0.0 {
            bad.push("eta must be positive".into());
        }
        if self.t_rounds == 0.0 {
            bad.push("t_rounds must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(AnalysisError::InvalidArgument(bad.join("; ")))
        }
    }

    /// Largest admissible global step `μ_c / (2 H L_g (μ_c² + σ_c²))`.
    pub fn eta_max(&self) -> f64 {
        self.mu_c / (2.0 * self.h as f64 * self.l_g * (self.mu_c.powi(2) + self.sigma_c2))
    }

    /// Largest admissible local step
    /// `min{1/(2√30 H L_g), 1/√(6H(L_g² + L_h²))}`.
    pub fn eta_l_max(&self) -> f64 {
        let h = self.h as f64;
        let a = 1.0 / (2.0 * 30f64.sqrt() * h * self.l_g);
        let b = 1.0 / (6.0 * h * (self.l_g.powi(2) + self.l_h.powi(2))).sqrt();
        a.min(b)
    }

    /// Lists every violated learning-rate constraint.
    pub fn check_admissible(&self) -> Result<(), AnalysisError> {
        let mut why = Vec::new();
        if self.eta > self.eta_max() {
            why.push(format!(
                "eta = {} exceeds mu_c/(2 H L_g (mu_c^2 + sigma_c^2)) = {}",
                self.eta,
                self.eta_max()
            ));
        }
        if self.eta_l > self.eta_l_max() {
            why.push(format!(
                "eta_l = {} exceeds min(1/(2 sqrt(30) H L_g), 1/sqrt(6 H (L_g^2 + L_h^2))) = {}",
                self.eta_l,
                self.eta_l_max()
            ));
        }
        if why.is_empty() {
            Ok(())
        } else {
            Err(AnalysisError::Admissibility(why.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Use the explicit constants of the proof instead of unit constants.
    pub exact_constants: bool,
    /// Reject learning rates outside the admissible region.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `f_gap / (η μ_c H T)`.
    pub optimization: f64,
    /// `η d L_g σ_z² / (μ_c H N²)`.
    pub channel_noise: f64,
    /// `η L_g σ_s² (μ_c² + σ_c²) / (μ_c N)`.
    pub sgd_noise: f64,
    /// `(H−1)² η_l² L_h² σ_g²`.
    pub local_divergence: f64,
    /// `(H−1) η_l² σ_s² (L_h² + L_g²/N)`.
    pub local_variance: f64,
    /// `(η L_g E[τ]/H)(d σ_z²/N² + G² H² (1 + μ_c² + σ_c²))`.
    pub staleness: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.optimization
            + self.channel_noise
            + self.sgd_noise
            + self.local_divergence
            + self.local_variance
            + self.staleness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub total: f64,
    pub terms: BoundTerms,
    /// Large-`N` form `f_gap/(η μ_c H T) + η_l²(H−1)² L_h² (σ_g² + σ_s²)
    /// + η H L_g E[τ] G² (1 + μ_c² + σ_c²)`, with unit constants.
    pub asymptotic: f64,
    pub options: BoundOptions,
}

/// Evaluates the convergence bound on `min_t E‖∇f(w_t)‖²` term by term.
pub fn theorem1_bound(
    c: &ConvergenceConstants,
    options: BoundOptions,
) -> Result<BoundReport, AnalysisError> {
    c.check()?;
    if options.strict {
        c.check_admissible()?;
    }
    let (d, n, h) = (c.d as f64, c.n as f64, c.h as f64);
    let fading2 = c.mu_c.powi(2) + c.sigma_c2;
    let optimization = if c.t_rounds.is_infinite() {
        0.0
    } else {
        c.f_gap / (c.eta * c.mu_c * h * c.t_rounds)
    };
    let channel_noise = c.eta * d * c.l_g * c.sigma_z2 / (c.mu_c * h * n * n);
    let sgd_noise = c.eta * c.l_g * c.sigma_s2 * fading2 / (c.mu_c * n);
    let lh2 = c.l_h.powi(2);
    let lg2 = c.l_g.powi(2);
    let el2 = c.eta_l.powi(2);
    let terms = if options.exact_constants {
        BoundTerms {
            optimization: 4.0 * optimization,
            channel_noise: 2.0 * channel_noise,
            sgd_noise: 4.0 * sgd_noise,
            local_divergence: 72.0 * (h - 1.0).powi(2) * el2 * lh2 * c.sigma_g2,
            local_variance: 4.0 * (h - 1.0) * el2 * c.sigma_s2 * (6.0 * lh2 + 5.0 * lg2 / n),
            staleness: (4.0 * c.l_g * c.eta * c.e_tau / h)
                * (d * c.sigma_z2 / (2.0 * n * n) + c.g2 * h * h * (0.5 + fading2)),
        }
    } else {
        BoundTerms {
            optimization,
            channel_noise,
            sgd_noise,
            local_divergence: (h - 1.0).powi(2) * el2 * lh2 * c.sigma_g2,
            local_variance: (h - 1.0) * el2 * c.sigma_s2 * (lh2 + lg2 / n),
            staleness: (c.eta * c.l_g * c.e_tau / h)
                * (d * c.sigma_z2 / (n * n) + c.g2 * h * h * (1.0 + fading2)),
        }
    };
    let asymptotic = optimization
        + el2 * (h - 1.0).powi(2) * lh2 * (c.sigma_g2 + c.sigma_s2)
        + c.eta * h * c.l_g * c.e_tau * c.g2 * (1.0 + fading2);
    Ok(BoundReport { total: terms.total(), terms, asymptotic, options })
}

/// Bound on `E‖g_t‖²`:
/// `2(μ_c² + σ_c²) Σ_l q_l · norms[l] + 2Hσ_s²(μ_c² + σ_c²)/N + dσ_z²/N²`,
/// where `norms[l]` estimates `‖(1/N) Σ_n Σ_s ∇f_n‖²` at round `t − l`.
pub fn lemma2_bound(
    c: &ConvergenceConstants,
    norms: &[f64],
    q: &StalenessDistribution,
) -> Result<f64, AnalysisError> {
    if c.n == 0 {
        return Err(AnalysisError::InvalidArgument("n = 0".into()));
    }
    let needed = q.support_max() + 1;
    if norms.len() < needed {
        return Err(AnalysisError::InvalidArgument(format!(
            "{} norm estimates for a staleness law with support up to {}",
            norms.len(),
            needed - 1
        )));
    }
    let (d, n, h) = (c.d as f64, c.n as f64, c.h as f64);
    let fading2 = c.mu_c.powi(2) + c.sigma_c2;
    let mixed: f64 = q.q.iter().zip(norms).map(|(ql, nl)| ql * nl).sum();
    Ok(2.0 * fading2 * mixed + 2.0 * h * c.sigma_s2 * fading2 / n + d * c.sigma_z2 / (n * n))
}

/// [`lemma2_bound`] for every round of a logged run. `history[t]` is the
/// measured norm at round `t`; rounds before 0 reuse round 0.
pub fn lemma2_series(
    c: &ConvergenceConstants,
    history: &[f64],
    q: &StalenessDistribution,
) -> Result<Vec<f64>, AnalysisError> {
    if history.is_empty() {
        return Ok(Vec::new());
    }
    let span = q.support_max() + 1;
    (0..history.len())
        .map(|t| {
            let norms: Vec<f64> = (0..span).map(|l| history[t.saturating_sub(l)]).collect();
            lemma2_bound(c, &norms, q)
        })
        .collect()
}
