//! Experiment configuration: a TOML document with a few top-level keys and
//! one table per concern. Every key has a default, so an empty file is a
//! valid configuration.
//!
//! ```toml
//! seed = 1
//! rounds = 500
//! clients = 50
//! local_steps = 5
//! batch_size = 50
//! eta = 0.01
//! eta_l = 0.01
//! dir_alpha = 0.3
//! out = "runs/default"
//! workers = 1
//! eval_every = 1
//!
//! [policy]
//! kind = "fair_k"
//! rho = 0.1              # or k = ...
//! magnitude_share = 0.75 # or k_m = ...
//!
//! [channel]
//! mode = "analog"        # analog | noiseless | one_bit_mv
//! fading = "rayleigh"    # rayleigh | unit
//! mu_c = 1.0
//! sigma_z2 = 1.0
//!
//! [task]
//! kind = "logistic"      # logistic | mlp | quadratic
//!
//! [data]
//! source = "synthetic"   # synthetic | idx | csv
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{ConfigError, Error};
use crate::selection::{PolicyConfig, PolicyKind};
use crate::training::{ClassificationSpec, RegressionSpec, Round0, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    /// Number of clients `N`.
    pub clients: usize,
    /// Local steps `H`.
    pub local_steps: usize,
    /// Mini-batch size `B`, clamped per client to its shard size.
    pub batch_size: usize,
    pub eta: f64,
    pub eta_l: f64,
    pub dir_alpha: f64,
    pub out: PathBuf,
    pub workers: usize,
    /// Evaluate loss and accuracy every this many rounds (0: never; the last
    /// round is always evaluated otherwise).
    pub eval_every: usize,
    pub round0: Round0,
    pub debias_by_mu_c: bool,
    pub record_wall_time: bool,
    /// Optimal loss value used for `f(w₀) − f(w*)`.
    pub f_star: f64,
    pub policy: PolicySection,
    pub channel: ChannelParams,
    pub task: TaskSection,
    pub data: DataSection,
    pub markov: MarkovSection,
    pub estimate: EstimateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            rounds: 500,
            clients: 50,
            local_steps: 5,
            batch_size: 50,
            eta: 0.01,
            eta_l: 0.01,
            dir_alpha: 0.3,
            out: PathBuf::from("runs/default"),
            workers: 1,
            eval_every: 1,
            round0: Round0::Bootstrap,
            debias_by_mu_c: false,
            record_wall_time: false,
            f_star: 0.0,
            policy: PolicySection::default(),
            channel: ChannelParams::default(),
            task: TaskSection::default(),
            data: DataSection::default(),
            markov: MarkovSection::default(),
            estimate: EstimateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Budget `k`; overrides `rho`.
    pub k: Option<usize>,
    /// Compression ratio `k/d`, used when `k` is absent.
    pub rho: f64,
    /// Magnitude slots `k_M`; overrides `magnitude_share`.
    pub k_m: Option<usize>,
    /// `k_M / k`, used when `k_m` is absent.
    pub magnitude_share: f64,
    /// Policies run by `compare`.
    pub compare: Vec<PolicyKind>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::FairK,
            k: None,
            rho: 0.1,
            k_m: None,
            magnitude_share: 0.75,
            compare: PolicyKind::ALL.to_vec(),
        }
    }
}

impl PolicySection {
    pub fn budget(&self, d: usize) -> usize {
        self.k.unwrap_or_else(|| ((self.rho * d as f64).round() as usize).max(1))
    }

    pub fn magnitude_slots(&self, k: usize) -> usize {
        self.k_m
            .unwrap_or_else(|| (self.magnitude_share * k as f64).round() as usize)
    }

    /// The policy for model dimension `d`, with `kind` swapped in.
    pub fn resolve(&self, kind: PolicyKind, d: usize) -> Result<PolicyConfig, ConfigError> {
        let k = self.budget(d);
        let k_m = self.magnitude_slots(k);
        let mut why = Vec::new();
        if k == 0 || k > d {
            why.push(format!("policy.k: budget {k} must lie in [1, d = {d}]"));
        }
        if k_m > k {
            why.push(format!("policy.k_m: {k_m} exceeds the budget k = {k}"));
        }
        if why.is_empty() {
            Ok(PolicyConfig { kind, k, k_m })
        } else {
            Err(ConfigError(why))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Hidden width of the MLP.
    pub hidden: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection { kind: TaskKind::LogisticRegression, hidden: 32 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    // Synthetic classification.
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    // Synthetic regression (quadratic task); `features` is shared.
    pub groups: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub group_shift: f64,
    pub noise: f64,
    // IDX files.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub pixel_scale: f64,
    // CSV files.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub label_column: usize,
    pub header: bool,
    pub regression_bins: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let c = ClassificationSpec::default();
        let r = RegressionSpec::default();
        DataSection {
            source: DataSource::Synthetic,
            classes: c.classes,
            features: c.features,
            train_per_class: c.train_per_class,
            test_per_class: c.test_per_class,
            separation: c.separation,
            groups: r.groups,
            train_samples: r.train_samples,
            test_samples: r.test_samples,
            scale_min: r.scale_min,
            scale_max: r.scale_max,
            group_shift: r.group_shift,
            noise: r.noise,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            pixel_scale: 255.0,
            train_csv: None,
            test_csv: None,
            label_column: 0,
            header: true,
            regression_bins: 10,
        }
    }
}

impl DataSection {
    pub fn classification_spec(&self) -> ClassificationSpec {
        ClassificationSpec {
            classes: self.classes,
            features: self.features,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            separation: self.separation,
        }
    }

    pub fn regression_spec(&self) -> RegressionSpec {
        RegressionSpec {
            features: self.features,
            groups: self.groups,
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            group_shift: self.group_shift,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovSection {
    /// Exchange size `k_0`; overrides `exchange_share`.
    pub k0: Option<usize>,
    /// `k_0 / k_M`, used when `k0` is absent.
    pub exchange_share: f64,
    /// Monte-Carlo rounds; by default enough for 10⁶ refresh events.
    pub mc_rounds: Option<usize>,
}

impl Default for MarkovSection {
    fn default() -> Self {
        MarkovSection { k0: None, exchange_share: 0.25, mc_rounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub num_pairs: usize,
    pub radius: f64,
    pub lh_samples: usize,
    pub spread: f64,
    pub noise_points: usize,
    pub exact_constants: bool,
    pub strict: bool,
    /// Staleness mean for the bound; FAIR-k falls back to the analytic value.
    pub e_tau: Option<f64>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            num_pairs: 1000,
            radius: 1.0,
            lh_samples: 500,
            spread: 1.0,
            noise_points: 10,
            exact_constants: false,
            strict: false,
            e_tau: None,
        }
    }
}

fn positive(why: &mut Vec<String>, key: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        why.push(format!("{key}: must be positive and finite, got {v}"));
    }
}

fn at_least_one(why: &mut Vec<String>, key: &str, v: usize) {
    if v == 0 {
        why.push(format!("{key}: must be at least 1"));
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every field that does not depend on the loaded data and
    /// reports all violations together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut why = Vec::new();
        at_least_one(&mut why, "rounds", self.rounds);
        at_least_one(&mut why, "clients", self.clients);
        at_least_one(&mut why, "local_steps", self.local_steps);
        at_least_one(&mut why, "batch_size", self.batch_size);
        at_least_one(&mut why, "workers", self.workers);
        positive(&mut why, "eta", self.eta);
        positive(&mut why, "eta_l", self.eta_l);
        positive(&mut why, "dir_alpha", self.dir_alpha);
        if !self.f_star.is_finite() {
            why.push(format!("f_star: must be finite, got {}", self.f_star));
        }

        let p = &self.policy;
        if p.k.is_none() && !(p.rho > 0.0 && p.rho <= 1.0) {
            why.push(format!("policy.rho: must lie in (0, 1], got {}", p.rho));
        }
        if p.k == Some(0) {
            why.push("policy.k: must be at least 1".into());
        }
        if p.k_m.is_none() && !(0.0..=1.0).contains(&p.magnitude_share) {
            why.push(format!(
                "policy.magnitude_share: must lie in [0, 1], got {}",
                p.magnitude_share
            ));
        }
        if let (Some(k), Some(k_m)) = (p.k, p.k_m) {
            if k_m > k {
                why.push(format!("policy.k_m: {k_m} exceeds policy.k = {k}"));
            }
        }
        if p.compare.is_empty() {
            why.push("policy.compare: needs at least one policy".into());
        }

        if let Err(e) = self.channel.validate() {
            why.push(format!("channel: {e}"));
        }

        if self.task.kind == TaskKind::SmallMlp {
            at_least_one(&mut why, "task.hidden", self.task.hidden);
        }

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                at_least_one(&mut why, "data.features", d.features);
                if self.task.kind == TaskKind::SyntheticQuadratic {
                    at_least_one(&mut why, "data.groups", d.groups);
                    at_least_one(&mut why, "data.train_samples", d.train_samples);
                    positive(&mut why, "data.scale_min", d.scale_min);
                    positive(&mut why, "data.scale_max", d.scale_max);
                    if !(d.noise >= 0.0 && d.group_shift >= 0.0) {
                        why.push("data.noise and data.group_shift: must be nonnegative".into());
                    }
                } else {
                    if d.classes < 2 {
                        why.push(format!("data.classes: need at least 2, got {}", d.classes));
                    }
                    at_least_one(&mut why, "data.train_per_class", d.train_per_class);
                    if !(d.separation >= 0.0 && d.separation.is_finite()) {
                        why.push(format!("data.separation: must be nonnegative, got {}", d.separation));
                    }
                }
            }
            DataSource::Idx => {
                if self.task.kind == TaskKind::SyntheticQuadratic {
                    why.push("data.source: idx files carry class labels; use a classification task".into());
                }
                if d.train_images.is_none() {
                    why.push("data.train_images: required for idx data".into());
                }
                if d.train_labels.is_none() {
                    why.push("data.train_labels: required for idx data".into());
                }
                if d.test_images.is_some() != d.test_labels.is_some() {
                    why.push("data.test_images and data.test_labels: give both or neither".into());
                }
                positive(&mut why, "data.pixel_scale", d.pixel_scale);
            }
            DataSource::Csv => {
                if d.train_csv.is_none() {
                    why.push("data.train_csv: required for csv data".into());
                }
                at_least_one(&mut why, "data.regression_bins", d.regression_bins);
            }
        }

        let m = &self.markov;
        if m.k0.is_none() && !(m.exchange_share > 0.0 && m.exchange_share < 1.0) {
            why.push(format!(
                "markov.exchange_share: must lie in (0, 1), got {}",
                m.exchange_share
            ));
        }
        if m.k0 == Some(0) {
            why.push("markov.k0: must be at least 1".into());
        }

        let e = &self.estimate;
        if e.num_pairs < crate::analysis::MIN_PAIRS {
            why.push(format!(
                "estimate.num_pairs: need at least {}, got {}",
                crate::analysis::MIN_PAIRS,
                e.num_pairs
            ));
        }
        positive(&mut why, "estimate.radius", e.radius);
        positive(&mut why, "estimate.spread", e.spread);
        at_least_one(&mut why, "estimate.lh_samples", e.lh_samples);
        at_least_one(&mut why, "estimate.noise_points", e.noise_points);
        if let Some(t) = e.e_tau {
            if !(t >= 0.0 && t.is_finite()) {
                why.push(format!("estimate.e_tau: must be nonnegative, got {t}"));
            }
        }

        if why.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(why))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg = ExperimentConfig::from_toml("", "<inline>").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let again = ExperimentConfig::from_toml(&cfg.to_toml(), "<inline>").unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn every_violation_is_reported() {
        let text = r#"
            rounds = 0
            eta = -1.0
            dir_alpha = 0.0
            [policy]
            rho = 2.0
            [channel]
            mu_c = 0.0
            p_flip = 3.0
            [data]
            classes = 1
        "#;
        let Err(Error::Config(ConfigError(why))) = ExperimentConfig::from_toml(text, "x") else {
            panic!("expected a validation error");
        };
        for key in ["rounds", "eta:", "dir_alpha", "policy.rho", "channel:", "data.classes"] {
            assert!(why.iter().any(|w| w.starts_with(key)), "{key} missing from {why:?}");
        }
        assert!(why.iter().any(|w| w.contains("p_flip")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("roundz = 3", "cfg.toml").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("cfg.toml"));
    }

    #[test]
    fn policy_resolution() {
        let p = PolicySection::default();
        let c = p.resolve(PolicyKind::FairK, 210).unwrap();
        assert_eq!((c.k, c.k_m), (21, 16));
        let p = PolicySection { k: Some(300), ..PolicySection::default() };
        assert!(p.resolve(PolicyKind::TopK, 210).is_err());
    }
}
