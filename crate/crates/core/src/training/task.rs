//! Desk-scale models with hand-written losses and gradients.
//!
//! Parameters are a flat vector. Layouts:
//! - logistic: `W (C×p)` row-major, then `b (C)`;
//! - MLP: `W1 (h×p)`, `b1 (h)`, `W2 (C×h)`, `b2 (C)`, tanh hidden layer;
//! - quadratic: `w (p)`, loss `½(w·x − y)²`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[serde(alias = "logistic")]
    LogisticRegression,
    #[serde(alias = "mlp")]
    SmallMlp,
    #[serde(alias = "quadratic")]
    SyntheticQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub n_features: usize,
    /// 1 for the quadratic task.
    pub num_classes: usize,
    /// Hidden width; only used by the MLP.
    pub hidden: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax in place; returns log-sum-exp.
fn softmax(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
    m + s.ln()
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

impl Task {
    pub fn logistic(n_features: usize, num_classes: usize) -> Self {
        Task { kind: TaskKind::LogisticRegression, n_features, num_classes, hidden: 0 }
    }

    pub fn mlp(n_features: usize, num_classes: usize, hidden: usize) -> Self {
        Task { kind: TaskKind::SmallMlp, n_features, num_classes, hidden }
    }

    pub fn quadratic(n_features: usize) -> Self {
        Task { kind: TaskKind::SyntheticQuadratic, n_features, num_classes: 1, hidden: 0 }
    }

    /// Number of model parameters `d`.
    pub fn dim(&self) -> usize {
        let (p, c, h) = (self.n_features, self.num_classes, self.hidden);
        match self.kind {
            TaskKind::LogisticRegression => c * p + c,
            TaskKind::SmallMlp => h * p + h + c * h + c,
            TaskKind::SyntheticQuadratic => p,
        }
    }

    pub fn is_classification(&self) -> bool {
        self.kind != TaskKind::SyntheticQuadratic
    }

    /// Checks that a dataset fits this task.
    pub fn check_data(&self, data: &Dataset) -> Result<(), TrainingError> {
        if data.n_features != self.n_features {
            return Err(TrainingError::Dataset(format!(
                "dataset has {} features, task expects {}",
                data.n_features, self.n_features
            )));
        }
        match (self.is_classification(), data.num_classes()) {
            (true, Some(c)) if c <= self.num_classes => Ok(()),
            (true, Some(c)) => Err(TrainingError::Dataset(format!(
                "dataset has {c} classes, task expects at most {}",
                self.num_classes
            ))),
            (true, None) => Err(TrainingError::Dataset(
                "classification task needs class labels".into(),
            )),
            (false, None) => Ok(()),
            (false, Some(_)) => Err(TrainingError::Dataset(
                "quadratic task needs real-valued targets".into(),
            )),
        }
    }

    /// Initial parameters: small Gaussian weights (scaled by fan-in) for the
    /// MLP so tanh units break symmetry, zeros otherwise.
    pub fn init<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        if self.kind == TaskKind::SmallMlp {
            let (p, h, c) = (self.n_features, self.hidden, self.num_classes);
            let s1 = 1.0 / (p as f64).sqrt();
            let s2 = 1.0 / (h as f64).sqrt();
            for v in &mut w[..h * p] {
                let z: f64 = StandardNormal.sample(rng);
                *v = s1 * z;
            }
            let off = h * p + h;
            for v in &mut w[off..off + c * h] {
                let z: f64 = StandardNormal.sample(rng);
                *v = s2 * z;
            }
        }
        w
    }

    /// Mean loss over `rows`, accumulating the mean gradient into `grad`
    /// (overwritten).
    pub fn loss_grad(&self, w: &[f64], data: &Dataset, rows: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if rows.is_empty() {
            return 0.0;
        }
        let mut loss = 0.0;
        let mut scratch = Scratch::new(self);
        for &r in rows {
            loss += self.sample_loss_grad(w, data, r, Some(&mut *grad), &mut scratch);
        }
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    }

    pub fn loss(&self, w: &[f64], data: &Dataset, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let mut scratch = Scratch::new(self);
        let total: f64 = rows
            .iter()
            .map(|&r| self.sample_loss_grad(w, data, r, None, &mut scratch))
            .sum();
        total / rows.len() as f64
    }

    /// Full-dataset loss and gradient.
    pub fn full_loss_grad(&self, w: &[f64], data: &Dataset, grad: &mut [f64]) -> f64 {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.loss_grad(w, data, &rows, grad)
    }

    pub fn full_loss(&self, w: &[f64], data: &Dataset) -> f64 {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.loss(w, data, &rows)
    }

    /// Output scores for one sample (logits, or the regression prediction).
    pub fn scores(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new(self);
        self.forward(w, x, &mut s);
        s.out
    }

    fn forward(&self, w: &[f64], x: &[f64], s: &mut Scratch) {
        let (p, c, h) = (self.n_features, self.num_classes, self.hidden);
        match self.kind {
            TaskKind::LogisticRegression => {
                let bias = &w[c * p..];
                for k in 0..c {
                    s.out[k] = dot(&w[k * p..(k + 1) * p], x) + bias[k];
                }
            }
            TaskKind::SmallMlp => {
                let (w1, rest) = w.split_at(h * p);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for j in 0..h {
                    s.hidden[j] = (dot(&w1[j * p..(j + 1) * p], x) + b1[j]).tanh();
                }
                for k in 0..c {
                    s.out[k] = dot(&w2[k * h..(k + 1) * h], &s.hidden) + b2[k];
                }
            }
            TaskKind::SyntheticQuadratic => s.out[0] = dot(w, x),
        }
    }

    fn sample_loss_grad(
        &self,
        w: &[f64],
        data: &Dataset,
        r: usize,
        grad: Option<&mut [f64]>,
        s: &mut Scratch,
    ) -> f64 {
        let x = data.row(r);
        let (p, c, h) = (self.n_features, self.num_classes, self.hidden);
        self.forward(w, x, s);
        match self.kind {
            TaskKind::SyntheticQuadratic => {
                let resid = s.out[0] - data.target(r);
                if let Some(g) = grad {
                    g.iter_mut().zip(x).for_each(|(g, xi)| *g += resid * xi);
                }
                0.5 * resid * resid
            }
            TaskKind::LogisticRegression | TaskKind::SmallMlp => {
                let y = data.label(r);
                let z_y = s.out[y];
                let loss = softmax(&mut s.out) - z_y;
                let Some(g) = grad else { return loss };
                s.out[y] -= 1.0;
                if self.kind == TaskKind::LogisticRegression {
                    for k in 0..c {
                        let e = s.out[k];
                        g[k * p..(k + 1) * p].iter_mut().zip(x).for_each(|(g, xi)| *g += e * xi);
                        g[c * p + k] += e;
                    }
                } else {
                    let (g1, rest) = g.split_at_mut(h * p);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (g2, gb2) = rest.split_at_mut(c * h);
                    let w2 = &w[h * p + h..h * p + h + c * h];
                    s.delta.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..c {
                        let e = s.out[k];
                        gb2[k] += e;
                        for j in 0..h {
                            g2[k * h + j] += e * s.hidden[j];
                            s.delta[j] += e * w2[k * h + j];
                        }
                    }
                    for j in 0..h {
                        let dj = s.delta[j] * (1.0 - s.hidden[j] * s.hidden[j]);
                        gb1[j] += dj;
                        g1[j * p..(j + 1) * p].iter_mut().zip(x).for_each(|(g, xi)| *g += dj * xi);
                    }
                }
                loss
            }
        }
    }
}

struct Scratch {
    out: Vec<f64>,
    hidden: Vec<f64>,
    delta: Vec<f64>,
}

impl Scratch {
    fn new(t: &Task) -> Self {
        Scratch {
            out: vec![0.0; t.num_classes.max(1)],
            hidden: vec![0.0; t.hidden],
            delta: vec![0.0; t.hidden],
        }
    }
}
