//! Experiment orchestration behind the `fairk` command line: configuration,
//! data preparation, matched-seed runs and persisted outputs.

mod config;
mod persist;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    DataSection, DataSource, EstimateSection, ExperimentConfig, MarkovSection, PolicySection,
    TaskSection,
};
pub use persist::{
    compare_rows, read_metrics, write_summary, write_text, MetricsWriter, RunSummary,
    COMPARE_HEADER,
};

use crate::analysis::{
    estimate_lh, estimate_ltilde, estimate_noise, theorem1_bound, BoundOptions, BoundReport,
    ConvergenceConstants, FederatedObjective, Objective,
};
use crate::aou_markov::{analyze, simulate_exchange_process, ExchangeModel, BURN_IN_FACTOR};
use crate::error::{ConfigError, Error};
use crate::rng::{self, Stream};
use crate::selection::{PolicyConfig, PolicyKind};
use crate::training::{
    build_clients, load_csv, load_idx, synthetic_classification, synthetic_regression, Dataset,
    RoundMetrics, Simulation, Task, TaskKind, TrainingSettings,
};

/// Task and data built from a configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub task: Task,
    pub train: Dataset,
    pub test: Option<Dataset>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, Error> {
    let d = &cfg.data;
    let quadratic = cfg.task.kind == TaskKind::SyntheticQuadratic;
    let (train, test) = match d.source {
        config::DataSource::Synthetic => {
            let mut rng = rng::stream(cfg.seed, Stream::Data);
            let (train, test) = if quadratic {
                synthetic_regression(&d.regression_spec(), &mut rng)?
            } else {
                synthetic_classification(&d.classification_spec(), &mut rng)?
            };
            (train, (!test.is_empty()).then_some(test))
        }
        config::DataSource::Idx => {
            let (Some(images), Some(labels)) = (&d.train_images, &d.train_labels) else {
                return Err(ConfigError(vec!["data: idx source needs train_images and train_labels".into()]).into());
            };
            let train = load_idx(images, labels, d.pixel_scale)?;
            let test = match (&d.test_images, &d.test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l, d.pixel_scale)?),
                _ => None,
            };
            (train, test)
        }
        config::DataSource::Csv => {
            let Some(path) = &d.train_csv else {
                return Err(ConfigError(vec!["data: csv source needs train_csv".into()]).into());
            };
            let load = |p: &Path| load_csv(p, d.label_column, d.header, !quadratic, d.regression_bins);
            let train = load(path)?;
            let test = d.test_csv.as_deref().map(load).transpose()?;
            (train, test)
        }
    };
    let p = train.n_features;
    let classes = train
        .num_classes()
        .max(test.as_ref().and_then(Dataset::num_classes))
        .unwrap_or(1);
    let task = match cfg.task.kind {
        TaskKind::LogisticRegression => Task::logistic(p, classes),
        TaskKind::SmallMlp => Task::mlp(p, classes, cfg.task.hidden),
        TaskKind::SyntheticQuadratic => Task::quadratic(p),
    };
    task.check_data(&train)?;
    if let Some(t) = &test {
        task.check_data(t)?;
    }
    Ok(Prepared { task, train, test })
}

pub fn training_settings(cfg: &ExperimentConfig, policy: PolicyConfig) -> TrainingSettings {
    TrainingSettings {
        local_steps: cfg.local_steps,
        eta: cfg.eta,
        eta_l: cfg.eta_l,
        policy,
        channel: cfg.channel,
        round0: cfg.round0,
        debias_by_mu_c: cfg.debias_by_mu_c,
        seed: cfg.seed,
        workers: cfg.workers,
        eval_every: cfg.eval_every,
        record_wall_time: cfg.record_wall_time,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one policy over the prepared data, passing every record to `sink`.
/// Returns the records produced and the error that stopped the run, if any.
fn run_arm<F>(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    kind: PolicyKind,
    mut sink: F,
) -> Result<(Vec<RoundMetrics>, Option<Error>), Error>
where
    F: FnMut(&RoundMetrics) -> Result<(), Error>,
{
    let policy = cfg.policy.resolve(kind, prepared.task.dim())?;
    let clients = build_clients(&prepared.train, cfg.clients, cfg.dir_alpha, cfg.batch_size, cfg.seed)?;
    let mut sim = Simulation::new(
        prepared.task,
        clients,
        prepared.test.clone(),
        training_settings(cfg, policy),
    )?;
    let mut records = Vec::with_capacity(cfg.rounds);
    let outcome = sim.run(cfg.rounds, |m: &RoundMetrics| {
        sink(m)?;
        records.push(m.clone());
        Ok::<(), Error>(())
    });
    Ok((records, outcome.err()))
}

fn status(err: &Option<Error>) -> String {
    err.as_ref().map_or_else(|| "ok".to_string(), |e| e.to_string())
}

/// `run`: trains the configured policy and writes `metrics.jsonl`,
/// `summary.csv` and `config.toml` to `cfg.out`. The summary is written even
/// when training stops early.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, Error> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    let prepared = prepare(cfg)?;
    let mut writer = MetricsWriter::create(&cfg.out.join("metrics.jsonl"))?;
    let (records, err) = run_arm(cfg, &prepared, cfg.policy.kind, |m| writer.write(m))?;
    let summary = RunSummary::from_metrics(cfg.policy.kind.name(), &records, status(&err));
    write_summary(&cfg.out.join("summary.csv"), std::slice::from_ref(&summary))?;
    match err {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// `compare`: runs every policy in `policy.compare` on the same data,
/// partition and channel streams, writing `compare.csv` (one row per round
/// and policy) and `summary.csv` (one row per policy).
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>, Error> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    let prepared = prepare(cfg)?;
    let mut csv = format!("{COMPARE_HEADER}\n");
    let mut summaries = Vec::new();
    let mut failure = None;
    for &kind in &cfg.policy.compare {
        let (records, err) = run_arm(cfg, &prepared, kind, |_| Ok(()))?;
        csv.push_str(&compare_rows(kind.name(), &records));
        summaries.push(RunSummary::from_metrics(kind.name(), &records, status(&err)));
        if let Some(e) = err {
            failure = Some(e);
            break;
        }
    }
    write_text(&cfg.out.join("compare.csv"), &csv)?;
    write_summary(&cfg.out.join("summary.csv"), &summaries)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summaries),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AouDistReport {
    pub d: usize,
    pub k: usize,
    pub k_m: usize,
    pub k0: usize,
    pub max_staleness: usize,
    pub e_tau_analytic: f64,
    pub e_tau_empirical: f64,
    pub total_variation: f64,
    pub mc_rounds: usize,
    pub mc_max_age: u64,
    pub steady_state_residual: f64,
}

/// The exchange model implied by the configuration's FAIR-k budget.
pub fn exchange_model(cfg: &ExperimentConfig, d: usize) -> Result<ExchangeModel, Error> {
    let policy = cfg.policy.resolve(PolicyKind::FairK, d)?;
    let k0 = cfg
        .markov
        .k0
        .unwrap_or_else(|| ((cfg.markov.exchange_share * policy.k_m as f64).round() as usize).max(1));
    Ok(ExchangeModel::new(d, policy.k, policy.k_m, k0)?)
}

/// Monte-Carlo rounds giving at least 10⁶ recorded refresh events.
pub fn default_mc_rounds(m: &ExchangeModel) -> usize {
    let horizon = m.max_staleness().unwrap_or(1);
    let recorded = 1_000_000usize.div_ceil(m.k);
    (10 * horizon).max(BURN_IN_FACTOR * horizon + recorded)
}

/// `aou-dist`: analytic and simulated staleness laws side by side in
/// `aou_dist.csv` (`l,analytic_prob,empirical_prob`).
pub fn aou_dist(cfg: &ExperimentConfig) -> Result<AouDistReport, Error> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let d = prepare(cfg)?.task.dim();
    let m = exchange_model(cfg, d)?;
    let (_, ss, analytic) = analyze(&m)?;
    let rounds = cfg.markov.mc_rounds.unwrap_or_else(|| default_mc_rounds(&m));
    let mc = simulate_exchange_process(&m, rounds, cfg.seed)?;
    let (a, e) = (&analytic.distribution, &mc.distribution);
    let top = a.support_max().max(e.support_max());
    let mut csv = String::from("l,analytic_prob,empirical_prob\n");
    for l in 0..=top {
        csv.push_str(&format!("{l},{},{}\n", a.prob(l), e.prob(l)));
    }
    write_text(&cfg.out.join("aou_dist.csv"), &csv)?;
    Ok(AouDistReport {
        d,
        k: m.k,
        k_m: m.k_m,
        k0: m.k0,
        max_staleness: analytic.max_staleness,
        e_tau_analytic: a.mean,
        e_tau_empirical: e.mean,
        total_variation: a.total_variation(e),
        mc_rounds: rounds,
        mc_max_age: mc.max_age,
        steady_state_residual: ss.residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedConstants {
    pub l_g: f64,
    pub l_h: f64,
    pub l_tilde: f64,
    pub sigma_s2: f64,
    pub sigma_g2: f64,
    pub g2: f64,
    /// Global training loss at the initial model.
    pub f_w0: f64,
    pub num_pairs: usize,
    pub lh_samples: usize,
    pub noise_points: usize,
    pub batches_per_point: usize,
    pub radius: f64,
    pub spread: f64,
}

/// `estimate-lipschitz`: sampled constants around the initial model,
/// written to `constants.json`.
pub fn estimate_constants(cfg: &ExperimentConfig) -> Result<EstimatedConstants, Error> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let prepared = prepare(cfg)?;
    let clients = build_clients(&prepared.train, cfg.clients, cfg.dir_alpha, cfg.batch_size, cfg.seed)?;
    let obj = FederatedObjective::from_clients(prepared.task, &clients, cfg.batch_size);
    let center = prepared.task.init(&mut rng::stream(cfg.seed, Stream::Init));
    let e = &cfg.estimate;
    let lip = estimate_ltilde(&obj, &center, e.num_pairs, e.radius, cfg.seed)?;
    let l_h = if cfg.clients >= 2 {
        estimate_lh(&obj, &center, e.lh_samples, e.spread, cfg.seed)?
    } else {
        0.0
    };
    let noise = estimate_noise(&obj, &center, e.noise_points, e.radius, cfg.seed)?;
    let out = EstimatedConstants {
        l_g: lip.l_g,
        l_h,
        l_tilde: lip.l_tilde,
        sigma_s2: noise.sigma_s2,
        sigma_g2: noise.sigma_g2,
        g2: noise.g2,
        f_w0: obj.loss(&center),
        num_pairs: lip.pairs,
        lh_samples: e.lh_samples,
        noise_points: noise.points,
        batches_per_point: noise.batches_per_point,
        radius: e.radius,
        spread: e.spread,
    };
    write_json(&cfg.out.join("constants.json"), &out)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}

pub fn read_constants(path: &Path) -> Result<EstimatedConstants, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDocument {
    pub constants: ConvergenceConstants,
    pub e_tau_source: String,
    pub bound: BoundReport,
}

/// `bound`: evaluates the convergence bound from estimated (or supplied)
/// constants and writes `bound.json`.
pub fn bound(cfg: &ExperimentConfig, constants: Option<&Path>) -> Result<BoundDocument, Error> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let est = match constants {
        Some(p) => read_constants(p)?,
        None => estimate_constants(cfg)?,
    };
    let d = prepare(cfg)?.task.dim();
    let (e_tau, source) = match (cfg.estimate.e_tau, cfg.policy.kind) {
        (Some(t), _) => (t, "config".to_string()),
        (None, PolicyKind::FairK) => {
            let m = exchange_model(cfg, d)?;
            let (_, _, a) = analyze(&m)?;
            (a.distribution.mean, format!("exchange model (k0 = {})", m.k0))
        }
        (None, other) => {
            return Err(ConfigError(vec![format!(
                "estimate.e_tau: required for policy {other}"
            )])
            .into())
        }
    };
    if est.f_w0 < cfg.f_star {
        return Err(ConfigError(vec![format!(
            "f_star: {} exceeds the initial loss {}",
            cfg.f_star, est.f_w0
        )])
        .into());
    }
    let c = ConvergenceConstants {
        l_g: est.l_g,
        l_h: est.l_h,
        l_tilde: est.l_tilde,
        sigma_s2: est.sigma_s2,
        sigma_g2: est.sigma_g2,
        g2: est.g2,
        mu_c: cfg.channel.mu_c,
        sigma_c2: cfg.channel.sigma_c2(),
        sigma_z2: cfg.channel.effective_sigma_z2(),
        d,
        n: cfg.clients,
        h: cfg.local_steps,
        eta: cfg.eta,
        eta_l: cfg.eta_l,
        e_tau,
        f_gap: est.f_w0 - cfg.f_star,
        t_rounds: cfg.rounds as f64,
    };
    let options = BoundOptions { exact_constants: cfg.estimate.exact_constants, strict: cfg.estimate.strict };
    let doc = BoundDocument { bound: theorem1_bound(&c, options)?, constants: c, e_tau_source: source };
    write_json(&cfg.out.join("bound.json"), &doc)?;
    Ok(doc)
}
