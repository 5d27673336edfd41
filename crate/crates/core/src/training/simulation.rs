//! The federated training loop.
//!
//! One call to [`Simulation::step`] is one communication round:
//!
//! 1. broadcast `w_t` and the mask `S_t`;
//! 2. every client runs `H` local SGD steps and returns its accumulated
//!    gradient (in parallel, one RNG stream per client);
//! 3. clients pack the entries selected by `S_t`, the channel aggregates them;
//! 4. the server splices the aggregate into `g_{t−1}` to get `g_t`;
//! 5. `w_{t+1} = w_t − η g_t`;
//! 6. `A_{t+1} = (A_t + 1) ⊙ (1 − S_t)`;
//! 7. `S_{t+1}` is chosen from `g_t` and `A_{t+1}`.
//!
//! Round 0 transmits all `d` entries (or, with [`Round0::TopMask`], the `k`
//! largest entries of the initial gradient).

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{evaluate, global_step, Client};
use super::data::Dataset;
use super::partition::dirichlet_partition;
use super::task::Task;
use crate::channel::{
    one_bit_mv_aggregate, oac_aggregate, reconstruct, sample_fading, ChannelMode, ChannelParams,
};
use crate::error::TrainingError;
use crate::rng::{self, Rng, Stream};
use crate::selection::{aou_update, top_mask, AoUVector, PolicyConfig, SelectionMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round0 {
    /// All `d` entries, sent over `⌈d/k⌉` slots and counted as one round.
    #[default]
    Bootstrap,
    /// Top-k of the mean full gradient at the initial model.
    TopMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSettings {
    pub local_steps: usize,
    pub eta: f64,
    pub eta_l: f64,
    pub policy: PolicyConfig,
    pub channel: ChannelParams,
    pub round0: Round0,
    pub debias_by_mu_c: bool,
    pub seed: u64,
    /// Threads for client updates; 1 runs them inline.
    pub workers: usize,
    /// Loss and accuracy are evaluated every `eval_every` rounds and on the
    /// final round; 0 disables evaluation.
    pub eval_every: usize,
    pub record_wall_time: bool,
}

impl TrainingSettings {
    /// The usual desk defaults: `H = 5`, `η = η_l = 0.01`. The batch size
    /// belongs to each client's sampler (see [`build_clients`]).
    pub fn new(policy: PolicyConfig, channel: ChannelParams, seed: u64) -> Self {
        TrainingSettings {
            local_steps: 5,
            eta: 0.01,
            eta_l: 0.01,
            policy,
            channel,
            round0: Round0::Bootstrap,
            debias_by_mu_c: false,
            seed,
            workers: 1,
            eval_every: 1,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Global training loss `(1/N) Σ_n f_n(w_{t+1})`.
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Mean and maximum of `A_{t+1}`.
    pub avg_aou: f64,
    pub max_aou: u64,
    /// `‖g_t‖²` of the reconstructed gradient.
    pub grad_norm2: f64,
    /// `‖(1/N) Σ_n ∇f̃_n‖²` of the clients' accumulated gradients.
    pub client_grad_norm2: f64,
    /// Times each entry has been selected in rounds `1..=t`.
    pub participation: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Partitions `train` across `n_clients` with `Dirichlet(alpha)` and gives
/// each client its own sampler stream.
pub fn build_clients(
    train: &Dataset,
    n_clients: usize,
    alpha: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Client>, TrainingError> {
    let parts = dirichlet_partition(
        &train.strata,
        n_clients,
        alpha,
        &mut rng::stream(seed, Stream::Partition),
    )?;
    parts
        .iter()
        .enumerate()
        .map(|(n, rows)| Client::new(train.subset(rows), batch_size, rng::stream(seed, Stream::Client(n))))
        .collect()
}

pub struct Simulation {
    task: Task,
    settings: TrainingSettings,
    clients: Vec<Client>,
    test: Option<Dataset>,
    pool: Option<rayon::ThreadPool>,
    w: Vec<f64>,
    g: Vec<f64>,
    aou: AoUVector,
    mask: SelectionMask,
    last_mask: SelectionMask,
    participation: Vec<u64>,
    client_grads: Vec<Vec<f64>>,
    round: usize,
    fading_rng: Rng,
    noise_rng: Rng,
    policy_rng: Rng,
    flip_rng: Rng,
    started: Instant,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("task", &self.task)
            .field("clients", &self.clients.len())
            .field("round", &self.round)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(
        task: Task,
        clients: Vec<Client>,
        test: Option<Dataset>,
        settings: TrainingSettings,
    ) -> Result<Self, TrainingError> {
        let d = task.dim();
        if clients.is_empty() {
            return Err(TrainingError::InvalidArgument("no clients".into()));
        }
        for c in &clients {
            task.check_data(&c.data)?;
        }
        if let Some(t) = &test {
            task.check_data(t)?;
        }
        if settings.local_steps == 0 {
            return Err(TrainingError::InvalidArgument("H must be at least 1".into()));
        }
        if !(settings.eta > 0.0 && settings.eta_l > 0.0) {
            return Err(TrainingError::InvalidArgument("learning rates must be positive".into()));
        }
        settings.policy.validate(d)?;
        settings.channel.validate()?;
        let pool = if settings.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(settings.workers)
                    .build()
                    .map_err(|e| TrainingError::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let seed = settings.seed;
        let w = task.init(&mut rng::stream(seed, Stream::Init));
        let mut sim = Simulation {
            task,
            clients,
            test,
            pool,
            g: vec![0.0; d],
            aou: AoUVector::zeros(d),
            mask: SelectionMask::ones(d),
            last_mask: SelectionMask::zeros(d),
            participation: vec![0; d],
            client_grads: Vec::new(),
            round: 0,
            fading_rng: rng::stream(seed, Stream::Fading),
            noise_rng: rng::stream(seed, Stream::Noise),
            policy_rng: rng::stream(seed, Stream::TopRand),
            flip_rng: rng::stream(seed, Stream::BitFlip),
            started: Instant::now(),
            w,
            settings,
        };
        if sim.settings.round0 == Round0::TopMask {
            let mut mean = vec![0.0; d];
            let mut grad = vec![0.0; d];
            for c in &sim.clients {
                sim.task.full_loss_grad(&sim.w, &c.data, &mut grad);
                mean.iter_mut().zip(&grad).for_each(|(m, g)| *m += g);
            }
            sim.mask = top_mask(&mean, sim.settings.policy.k)?;
        }
        Ok(sim)
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn settings(&self) -> &TrainingSettings {
        &self.settings
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    /// Index of the next round to run.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Most recent reconstructed gradient `g_t`.
    pub fn gradient(&self) -> &[f64] {
        &self.g
    }

    /// Mask that the next round will use.
    pub fn next_mask(&self) -> &SelectionMask {
        &self.mask
    }

    /// Mask used by the most recent round.
    pub fn last_mask(&self) -> &SelectionMask {
        &self.last_mask
    }

    pub fn aou(&self) -> &AoUVector {
        &self.aou
    }

    pub fn participation(&self) -> &[u64] {
        &self.participation
    }

    /// Accumulated gradients returned by the clients in the most recent round.
    pub fn client_gradients(&self) -> &[Vec<f64>] {
        &self.client_grads
    }

    /// Global training loss `(1/N) Σ_n f_n(w)`.
    pub fn train_loss(&self, w: &[f64]) -> f64 {
        let total: f64 = self.clients.iter().map(|c| self.task.full_loss(w, &c.data)).sum();
        total / self.clients.len() as f64
    }

    fn local_updates(&mut self) -> Result<Vec<Vec<f64>>, TrainingError> {
        let (task, w, round) = (&self.task, &self.w, self.round);
        let (h, eta_l) = (self.settings.local_steps, self.settings.eta_l);
        let run = |c: &mut Client| c.local_update(task, w, h, eta_l, round);
        let results: Vec<Result<Vec<f64>, TrainingError>> = match &self.pool {
            Some(pool) => pool.install(|| self.clients.par_iter_mut().map(run).collect()),
            None => self.clients.iter_mut().map(run).collect(),
        };
        // First failure in client order, whatever the schedule.
        results.into_iter().collect()
    }

    pub fn step(&mut self) -> Result<RoundMetrics, TrainingError> {
        let t = self.round;
        let n = self.clients.len();
        let d = self.w.len();

        let grads = self.local_updates()?;
        let payloads: Vec<Vec<f64>> = grads.iter().map(|g| self.mask.pack(g)).collect();
        let ch = &self.settings.channel;
        let mut agg = match ch.mode {
            ChannelMode::OneBitMv => one_bit_mv_aggregate(&payloads, ch, &mut self.flip_rng)?,
            ChannelMode::Analog | ChannelMode::Noiseless => {
                let h = sample_fading(ch, n, &mut self.fading_rng);
                oac_aggregate(&payloads, &h, ch, &mut self.noise_rng)?
            }
        };
        if self.settings.debias_by_mu_c && ch.mode != ChannelMode::OneBitMv {
            agg.iter_mut().for_each(|a| *a /= ch.mu_c);
        }
        self.g = reconstruct(&self.g, &self.mask, &agg)?;
        global_step(&mut self.w, &self.g, self.settings.eta);
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(TrainingError::Divergence { round: t, what: "global model" });
        }

        self.aou = aou_update(&self.aou, &self.mask)?;
        if t > 0 {
            for i in self.mask.indices() {
                self.participation[i] += 1;
            }
        }
        let next = self.settings.policy.select(&self.g, &self.aou, &mut self.policy_rng)?;
        self.last_mask = std::mem::replace(&mut self.mask, next);

        let mut mean = vec![0.0; d];
        for g in &grads {
            mean.iter_mut().zip(g).for_each(|(m, x)| *m += x);
        }
        let inv = 1.0 / n as f64;
        let client_grad_norm2 = mean.iter().map(|m| (m * inv) * (m * inv)).sum();
        self.client_grads = grads;

        let cadence = self.settings.eval_every;
        let evaluate_now = cadence > 0 && t.is_multiple_of(cadence);
        let train_loss = if evaluate_now {
            let l = self.train_loss(&self.w);
            if !l.is_finite() {
                return Err(TrainingError::Divergence { round: t, what: "training loss" });
            }
            Some(l)
        } else {
            None
        };
        let (test_loss, test_accuracy) = match (&self.test, evaluate_now) {
            (Some(test), true) => {
                let (l, a) = evaluate(&self.task, &self.w, test);
                (Some(l), a)
            }
            _ => (None, None),
        };
        self.round += 1;
        Ok(RoundMetrics {
            round: t,
            train_loss,
            test_loss,
            test_accuracy,
            avg_aou: self.aou.mean(),
            max_aou: self.aou.max(),
            grad_norm2: self.g.iter().map(|x| x * x).sum(),
            client_grad_norm2,
            participation: self.participation.clone(),
            wall_time: self
                .settings
                .record_wall_time
                .then(|| self.started.elapsed().as_secs_f64()),
        })
    }

    /// Runs `rounds` rounds, handing each record to `sink` as it is produced.
    /// The final round is always evaluated.
    pub fn run<E, F>(&mut self, rounds: usize, mut sink: F) -> Result<(), E>
    where
        E: From<TrainingError>,
        F: FnMut(&RoundMetrics) -> Result<(), E>,
    {
        let cadence = self.settings.eval_every;
        for r in 0..rounds {
            let mut m = self.step()?;
            let last = r + 1 == rounds;
            if last && cadence > 0 && m.train_loss.is_none() {
                m.train_loss = Some(self.train_loss(&self.w));
                if let Some(test) = &self.test {
                    let (l, a) = evaluate(&self.task, &self.w, test);
                    m.test_loss = Some(l);
                    m.test_accuracy = a;
                }
            }
            sink(&m)?;
        }
        Ok(())
    }
}

/// Runs a full experiment and returns every record plus the final model.
pub fn run_experiment(
    task: Task,
    clients: Vec<Client>,
    test: Option<Dataset>,
    settings: TrainingSettings,
    rounds: usize,
) -> Result<(Vec<RoundMetrics>, Vec<f64>), TrainingError> {
    let mut sim = Simulation::new(task, clients, test, settings)?;
    let mut out = Vec::with_capacity(rounds);
    sim.run(rounds, |m| {
        out.push(m.clone());
        Ok::<(), TrainingError>(())
    })?;
    Ok((out, sim.w))
}
