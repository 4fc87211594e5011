//! Linear classifier heads over pooled embeddings.
//!
//! A head's rows double as final-layer CAM gradients: under global average
//! pooling followed by a linear layer, `d y^c / d A_k[i, j] = w^c_k / Z`.

mod persist;
mod similarity;
mod train;

use serde::{Deserialize, Serialize};

pub use persist::{load_head, save_head, HeadSidecar};
pub use similarity::{cosine, rank_by_weight_similarity, weight_similarity_profile, SimilarityProfile};
pub use train::{train_head, train_head_with_history, EmbeddingSet, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("embedding has dimension {actual}, head expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("requested {requested} references but only {available} other classes exist")]
    TooManyReferences { requested: usize, available: usize },
    #[error("invalid head: {0}")]
    Invalid(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty embedding set")]
    EmptySet,
    #[error("weight row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("head needs at least two classes")]
    TooFewClasses,
    #[error(transparent)]
    Store(#[from] crate::tensor_store::StoreError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadOrigin {
    Trained,
    TextEmbeddings,
}

/// `C x K` weight matrix with optional bias and class names.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: Vec<f32>,
    num_classes: usize,
    dim: usize,
    bias: Option<Vec<f32>>,
    class_names: Vec<String>,
    origin: HeadOrigin,
}

const TEXT_ROW_NORM_TOL: f32 = 1e-4;

impl ClassifierHead {
    pub fn new(
        num_classes: usize,
        dim: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        class_names: Vec<String>,
        origin: HeadOrigin,
    ) -> Result<Self, HeadError> {
        if num_classes == 0 || dim == 0 {
            return Err(HeadError::Invalid("empty weight matrix".into()));
        }
        if weights.len() != num_classes * dim {
            return Err(HeadError::Invalid(format!(
                "{} weights for a {num_classes}x{dim} head",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(HeadError::Invalid("non-finite weight".into()));
        }
        if let Some(b) = &bias {
            if b.len() != num_classes || b.iter().any(|v| !v.is_finite()) {
                return Err(HeadError::Invalid("bias must be C finite values".into()));
            }
        }
        if class_names.len() != num_classes {
            return Err(HeadError::Invalid(format!(
                "{} class names for {num_classes} classes",
                class_names.len()
            )));
        }
        let head = Self {
            weights,
            num_classes,
            dim,
            bias,
            class_names,
            origin,
        };
        if origin == HeadOrigin::TextEmbeddings {
            for c in 0..num_classes {
                let norm = head.row(c).iter().map(|w| w * w).sum::<f32>().sqrt();
                if (norm - 1.0).abs() > TEXT_ROW_NORM_TOL {
                    return Err(HeadError::Invalid(format!(
                        "text embedding row {c} has norm {norm}"
                    )));
                }
            }
        }
        Ok(head)
    }

    /// Builds a text-embedding head, L2-normalizing each prompt embedding.
    pub fn from_text_embeddings(rows: &[Vec<f32>], prompts: Vec<String>) -> Result<Self, HeadError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(HeadError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm == 0.0 {
                return Err(HeadError::ZeroNormRow(i));
            }
            weights.extend(row.iter().map(|v| v / norm));
        }
        Self::new(rows.len(), dim, weights, None, prompts, HeadOrigin::TextEmbeddings)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> HeadOrigin {
        self.origin
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn check_class(&self, class: usize) -> Result<(), HeadError> {
        if class >= self.num_classes {
            return Err(HeadError::ClassOutOfRange {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Every row multiplied by `s`; bias scaled too.
    pub fn scaled(&self, s: f32) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * s).collect(),
            bias: self.bias.as_ref().map(|b| b.iter().map(|v| v * s).collect()),
            origin: HeadOrigin::Trained,
            ..self.clone()
        }
    }

    /// `W e (+ b)`.
    pub fn logits(&self, embedding: &[f32]) -> Result<Vec<f32>, HeadError> {
        if embedding.len() != self.dim {
            return Err(HeadError::DimensionMismatch {
                expected: self.dim,
                actual: embedding.len(),
            });
        }
        Ok((0..self.num_classes)
            .map(|c| {
                let dot: f32 = self.row(c).iter().zip(embedding).map(|(w, e)| w * e).sum();
                dot + self.bias.as_ref().map_or(0.0, |b| b[c])
            })
            .collect())
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / total) as f32).collect()
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The `count` classes other than `target` with the highest logits,
/// ties broken by ascending class id.
pub fn rank_reference_classes(
    logits: &[f32],
    target: usize,
    count: usize,
) -> Result<Vec<usize>, HeadError> {
    if target >= logits.len() {
        return Err(HeadError::ClassOutOfRange {
            class: target,
            num_classes: logits.len(),
        });
    }
    let available = logits.len() - 1;
    if count > available {
        return Err(HeadError::TooManyReferences {
            requested: count,
            available,
        });
    }
    let mut others: Vec<usize> = (0..logits.len()).filter(|&i| i != target).collect();
    others.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    others.truncate(count);
    Ok(others)
}
