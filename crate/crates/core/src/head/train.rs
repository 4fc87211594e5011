//! Softmax cross-entropy linear probe trained with Adam.
//!
//! Weights and bias start at zero. Each epoch draws one Fisher-Yates
//! permutation from a single [`SplitMix64`] stream seeded with
//! `config.seed`, then walks it in mini-batches of `batch_size` (the last
//! batch may be short). The loss is the batch mean.

use serde::{Deserialize, Serialize};

use super::{ClassifierHead, HeadError, HeadOrigin};
use crate::rng::SplitMix64;
use crate::tensor_store::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 100,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HeadError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(HeadError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HeadError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(HeadError::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(HeadError::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

/// `N x K` pooled embeddings with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub embeddings: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl EmbeddingSet {
    pub fn new(embeddings: Vec<f32>, dim: usize, labels: Vec<usize>, split: Split) -> Result<Self, HeadError> {
        if labels.is_empty() || dim == 0 {
            return Err(HeadError::EmptySet);
        }
        if embeddings.len() != labels.len() * dim {
            return Err(HeadError::DimensionMismatch {
                expected: labels.len() * dim,
                actual: embeddings.len(),
            });
        }
        Ok(Self {
            embeddings,
            dim,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// Fraction of samples whose argmax logit equals the label.
    pub fn accuracy(&self, head: &ClassifierHead) -> Result<f64, HeadError> {
        let mut correct = 0usize;
        for i in 0..self.len() {
            let logits = head.logits(self.row(i))?;
            if super::argmax(&logits) == self.labels[i] {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ClassifierHead,
    /// Mean cross-entropy over the full set before training, then after
    /// every epoch (`epochs + 1` entries).
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

fn mean_loss(head: &ClassifierHead, set: &EmbeddingSet) -> Result<f64, HeadError> {
    let mut total = 0.0;
    for i in 0..set.len() {
        let p = super::softmax(&head.logits(set.row(i))?);
        total -= (p[set.labels[i]] as f64).max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / set.len() as f64)
}

pub fn train_head(
    train: &EmbeddingSet,
    class_names: Vec<String>,
    config: &TrainConfig,
) -> Result<ClassifierHead, HeadError> {
    train_head_with_history(train, class_names, config).map(|o| o.head)
}

pub fn train_head_with_history(
    train: &EmbeddingSet,
    class_names: Vec<String>,
    config: &TrainConfig,
) -> Result<TrainOutcome, HeadError> {
    config.validate()?;
    if train.is_empty() {
        return Err(HeadError::EmptySet);
    }
    let num_classes = class_names.len();
    if let Some(&bad) = train.labels.iter().find(|&&l| l >= num_classes) {
        return Err(HeadError::ClassOutOfRange {
            class: bad,
            num_classes,
        });
    }
    let dim = train.dim;
    let mut weights = vec![0f32; num_classes * dim];
    let mut bias = vec![0f32; num_classes];
    let mut w_opt = Adam::new(weights.len());
    let mut b_opt = Adam::new(bias.len());
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let snapshot = |w: &[f32], b: &[f32]| {
        ClassifierHead::new(
            num_classes,
            dim,
            w.to_vec(),
            Some(b.to_vec()),
            class_names.clone(),
            HeadOrigin::Trained,
        )
    };
    let mut epoch_losses = vec![mean_loss(&snapshot(&weights, &bias)?, train)?];

    let mut w_grad = vec![0f32; weights.len()];
    let mut b_grad = vec![0f32; bias.len()];
    let mut logits = vec![0f32; num_classes];
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            w_grad.iter_mut().for_each(|g| *g = 0.0);
            b_grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f32;
            for &i in batch {
                let e = train.row(i);
                for (c, l) in logits.iter_mut().enumerate() {
                    let row = &weights[c * dim..(c + 1) * dim];
                    *l = row.iter().zip(e).map(|(w, x)| w * x).sum::<f32>() + bias[c];
                }
                let p = super::softmax(&logits);
                for c in 0..num_classes {
                    let delta = (p[c] - if c == train.labels[i] { 1.0 } else { 0.0 }) * inv;
                    b_grad[c] += delta;
                    for (g, x) in w_grad[c * dim..(c + 1) * dim].iter_mut().zip(e) {
                        *g += delta * x;
                    }
                }
            }
            w_opt.update(&mut weights, &w_grad, config);
            b_opt.update(&mut bias, &b_grad, config);
        }
        epoch_losses.push(mean_loss(&snapshot(&weights, &bias)?, train)?);
    }
    Ok(TrainOutcome {
        head: snapshot(&weights, &bias)?,
        epoch_losses,
    })
}
