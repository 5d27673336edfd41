//! Per-client objectives seen by the constant estimators.

use rand::Rng as _;

use crate::rng::Rng;
use crate::training::{Client, Dataset, Task};

/// A federated objective `f = (1/N) Σ_n f_n`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize;

    /// Full local gradient `∇f_n(w)` written into `out`.
    fn client_grad(&self, n: usize, w: &[f64], out: &mut [f64]);

    fn client_loss(&self, n: usize, w: &[f64]) -> f64;

    /// Mini-batch gradient `∇f_n(w; θ)`. Objectives without sampling noise
    /// return the full gradient.
    fn client_batch_grad(&self, n: usize, w: &[f64], _rng: &mut Rng, out: &mut [f64]) {
        self.client_grad(n, w, out);
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let n = self.num_clients();
        (0..n).map(|i| self.client_loss(i, w)).sum::<f64>() / n as f64
    }
}

/// All client gradients at `w` (rows) and their mean, summed in client order.
pub(crate) fn all_grads(obj: &dyn Objective, w: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = obj.dim();
    let mut mean = vec![0.0; d];
    let grads: Vec<Vec<f64>> = (0..obj.num_clients())
        .map(|n| {
            let mut g = vec![0.0; d];
            obj.client_grad(n, w, &mut g);
            g
        })
        .collect();
    for g in &grads {
        mean.iter_mut().zip(g).for_each(|(m, x)| *m += x);
    }
    let inv = 1.0 / grads.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    (grads, mean)
}

/// `f(w) = (1/N) Σ_n (½ wᵀ A_n w − c_nᵀ w + e_n)` with symmetric `A_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    dim: usize,
    /// Row-major `d × d` Hessians.
    pub hessians: Vec<Vec<f64>>,
    pub linear: Vec<Vec<f64>>,
    pub constants: Vec<f64>,
}

impl QuadraticObjective {
    /// Clients given by `(A_n, c_n)`; constants are zero.
    pub fn new(dim: usize, clients: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        let constants = vec![0.0; clients.len()];
        let (hessians, linear) = clients.into_iter().unzip();
        QuadraticObjective { dim, hessians, linear, constants }
    }

    /// One client with `f(w) = ½‖Aw − b‖²`, `A` row-major `rows × d`.
    pub fn least_squares(a: &[f64], b: &[f64], d: usize) -> Self {
        let rows = b.len();
        let mut h = vec![0.0; d * d];
        let mut c = vec![0.0; d];
        for r in 0..rows {
            let ar = &a[r * d..(r + 1) * d];
            for i in 0..d {
                c[i] += ar[i] * b[r];
                for j in 0..d {
                    h[i * d + j] += ar[i] * ar[j];
                }
            }
        }
        let e = 0.5 * b.iter().map(|x| x * x).sum::<f64>();
        QuadraticObjective { dim: d, hessians: vec![h], linear: vec![c], constants: vec![e] }
    }

    /// `N` copies of `½‖w‖²`.
    pub fn identity(d: usize, n: usize) -> Self {
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        Self::new(d, vec![(eye, vec![0.0; d]); n])
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_clients(&self) -> usize {
        self.hessians.len()
    }

    fn client_grad(&self, n: usize, w: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let (h, c) = (&self.hessians[n], &self.linear[n]);
        for i in 0..d {
            out[i] = h[i * d..(i + 1) * d].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - c[i];
        }
    }

    fn client_loss(&self, n: usize, w: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim];
        self.client_grad(n, w, &mut g);
        // ½wᵀAw − cᵀw = ½wᵀ(Aw − c) − ½cᵀw.
        let c = &self.linear[n];
        let quad: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        let lin: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
        0.5 * quad - 0.5 * lin + self.constants[n]
    }
}

/// A task over client shards; mini-batches of `batch_size` rows are drawn
/// uniformly without replacement.
#[derive(Debug, Clone)]
pub struct FederatedObjective<'a> {
    pub task: Task,
    pub shards: Vec<&'a Dataset>,
    pub batch_size: usize,
}

impl<'a> FederatedObjective<'a> {
    pub fn new(task: Task, shards: Vec<&'a Dataset>, batch_size: usize) -> Self {
        FederatedObjective { task, shards, batch_size }
    }

    pub fn from_clients(task: Task, clients: &'a [Client], batch_size: usize) -> Self {
        Self::new(task, clients.iter().map(|c| &c.data).collect(), batch_size)
    }
}

impl Objective for FederatedObjective<'_> {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn num_clients(&self) -> usize {
        self.shards.len()
    }

    fn client_grad(&self, n: usize, w: &[f64], out: &mut [f64]) {
        self.task.full_loss_grad(w, self.shards[n], out);
    }

    fn client_loss(&self, n: usize, w: &[f64]) -> f64 {
        self.task.full_loss(w, self.shards[n])
    }

    fn client_batch_grad(&self, n: usize, w: &[f64], rng: &mut Rng, out: &mut [f64]) {
        let len = self.shards[n].len();
        let b = self.batch_size.clamp(1, len);
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..b {
            let j = rng.random_range(i..len);
            idx.swap(i, j);
        }
        self.task.loss_grad(w, self.shards[n], &idx[..b], out);
    }
}
