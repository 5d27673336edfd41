//! Client-side state and the local multi-step SGD update.

use rand::Rng as _;

use super::data::Dataset;
use super::task::Task;
use crate::error::TrainingError;
use crate::rng::Rng;

/// Mini-batches drawn without replacement within an epoch; the order is
/// reshuffled whenever the remaining samples cannot fill a batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    /// `batch` is clamped to `[1, n]`.
    pub fn new(n: usize, batch: usize) -> Self {
        let batch = batch.clamp(1, n.max(1));
        BatchSampler { order: (0..n).collect(), cursor: n, batch }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_batch(&mut self, rng: &mut Rng) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            for i in (1..self.order.len()).rev() {
                let j = rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..self.cursor]
    }
}

/// One client: its shard, sampler and private RNG stream.
#[derive(Debug, Clone)]
pub struct Client {
    pub data: Dataset,
    pub sampler: BatchSampler,
    pub rng: Rng,
}

impl Client {
    pub fn new(data: Dataset, batch_size: usize, rng: Rng) -> Result<Self, TrainingError> {
        if data.is_empty() {
            return Err(TrainingError::Dataset("client has no samples".into()));
        }
        let sampler = BatchSampler::new(data.len(), batch_size);
        Ok(Client { data, sampler, rng })
    }

    /// Runs `h` local steps from `w0` and returns the accumulated gradient.
    pub fn local_update(
        &mut self,
        task: &Task,
        w0: &[f64],
        h: usize,
        eta_l: f64,
        round: usize,
    ) -> Result<Vec<f64>, TrainingError> {
        let Client { data, sampler, rng } = self;
        local_update(task, data, w0, h, eta_l, round, |r| sampler.next_batch(r).to_vec(), rng)
    }
}

/// `w ← w − η_l ∇f_n(w; θ_s)` for `s = 0..h`, returning `Σ_s ∇f_n(w_s; θ_s)`.
/// Batches come from `next_batch`, which is handed `rng`.
#[allow(clippy::too_many_arguments)]
pub fn local_update<F>(
    task: &Task,
    data: &Dataset,
    w0: &[f64],
    h: usize,
    eta_l: f64,
    round: usize,
    mut next_batch: F,
    rng: &mut Rng,
) -> Result<Vec<f64>, TrainingError>
where
    F: FnMut(&mut Rng) -> Vec<usize>,
{
    if h == 0 {
        return Err(TrainingError::InvalidArgument("H must be at least 1".into()));
    }
    if eta_l.is_nan() || eta_l <= 0.0 {
        return Err(TrainingError::InvalidArgument(format!(
            "local learning rate must be positive, got {eta_l}"
        )));
    }
    let d = w0.len();
    let mut w = w0.to_vec();
    let mut acc = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..h {
        let batch = next_batch(rng);
        let loss = task.loss_grad(&w, data, &batch, &mut grad);
        if !loss.is_finite() {
            return Err(TrainingError::Divergence { round, what: "local loss" });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainingError::Divergence { round, what: "local gradient" });
        }
        for ((a, wi), g) in acc.iter_mut().zip(w.iter_mut()).zip(&grad) {
            *a += g;
            *wi -= eta_l * g;
        }
    }
    Ok(acc)
}

/// `w' = w − η g`.
pub fn global_step(w: &mut [f64], g: &[f64], eta: f64) {
    for (wi, gi) in w.iter_mut().zip(g) {
        *wi -= eta * gi;
    }
}

/// Mean loss and, for classifiers, top-1 accuracy (argmax ties to the lower
/// class index).
pub fn evaluate(task: &Task, w: &[f64], test: &Dataset) -> (f64, Option<f64>) {
    let loss = task.full_loss(w, test);
    if !task.is_classification() || test.is_empty() {
        return (loss, None);
    }
    let correct = (0..test.len())
        .filter(|&i| super::task::argmax(&task.scores(w, test.row(i))) == test.label(i))
        .count();
    (loss, Some(correct as f64 / test.len() as f64))
}
