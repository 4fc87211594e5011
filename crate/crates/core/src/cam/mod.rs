//! Class activation maps and their comparative ("finer") variants.
//!
//! A saliency map is `h(sum_k alpha_k A_k)`. The baseline methods weight
//! channels by the target logit alone; the comparative variants weight
//! them by the logit difference `y^c - gamma * y^d` against a similar
//! reference class `d`, which suppresses evidence the two classes share.
//! With several references the per-reference results are aggregated.

mod compose;
mod explain;
mod layer;
mod score;
mod upsample;
mod weights;

use serde::{Deserialize, Serialize};

pub use compose::{activate, aggregate, aggregate_raw, compose_raw, normalize};
pub use explain::{explain, ModelContext};
pub use layer::{layercam_map, layercam_raw, uniform_gradients};
pub use score::{channel_masks, finer_scorecam_weights, scorecam_weights, scorecam_weights_for};
pub use upsample::upsample_bilinear;
pub use weights::{finer_weights, gradcam_weights_backend, gradcam_weights_final_layer};

pub use crate::features::FeatureStack;
use crate::backend::BackendError;
use crate::grid::{Grid, ShapeError};
use crate::head::HeadError;

/// Largest accepted comparison strength; values above 1 extrapolate.
pub const MAX_GAMMA: f32 = 4.0;
pub const DEFAULT_GAMMA: f32 = 0.6;
pub const DEFAULT_REFERENCE_COUNT: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CamError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("expected {expected} channel weights, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite channel weight")]
    NonFinite,
    #[error("aggregation needs at least one reference")]
    EmptyReferences,
    #[error("invalid explanation target: {0}")]
    InvalidTarget(String),
    #[error("gamma {0} outside [0, 4]")]
    GammaOutOfRange(f32),
    #[error("cannot normalize a map with negative entries")]
    NegativeEntry,
    #[error("{0} needs a model backend")]
    BackendRequired(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// Per-channel importance weights `alpha_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(Vec<f32>);

impl ChannelWeights {
    pub fn new(values: Vec<f32>) -> Result<Self, CamError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CamError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<(), CamError> {
        if self.0.len() != expected {
            return Err(CamError::LengthMismatch {
                expected,
                actual: self.0.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Grad,
    Layer,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the per-reference weights, then activate.
    #[default]
    AvgBeforeAct,
    /// Elementwise max of the per-reference raw maps, then activate.
    MaxBeforeAct,
    /// Activate each per-reference map, then average.
    AvgAfterAct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub class: usize,
    pub gamma: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTarget {
    pub target_class: usize,
    /// Empty means the baseline method.
    pub references: Vec<Reference>,
    pub method: Method,
    pub activation: Activation,
    pub aggregation: Aggregation,
}

impl ExplanationTarget {
    pub fn baseline(target_class: usize, method: Method) -> Self {
        Self {
            target_class,
            references: Vec::new(),
            method,
            activation: Activation::Relu,
            aggregation: Aggregation::AvgBeforeAct,
        }
    }

    pub fn finer(target_class: usize, references: &[usize], gamma: f32, method: Method) -> Self {
        Self {
            references: references.iter().map(|&class| Reference { class, gamma }).collect(),
            ..Self::baseline(target_class, method)
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), CamError> {
        if self.target_class >= num_classes {
            return Err(CamError::InvalidTarget(format!(
                "target class {} out of range for {num_classes} classes",
                self.target_class
            )));
        }
        for r in &self.references {
            if r.class >= num_classes {
                return Err(CamError::InvalidTarget(format!(
                    "reference class {} out of range for {num_classes} classes",
                    r.class
                )));
            }
            if r.class == self.target_class {
                return Err(CamError::InvalidTarget(format!(
                    "reference class {} equals the target",
                    r.class
                )));
            }
            if !(0.0..=MAX_GAMMA).contains(&r.gamma) {
                return Err(CamError::GammaOutOfRange(r.gamma));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Feature,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub grid: Grid,
    pub resolution: Resolution,
    pub normalized: bool,
}

impl SaliencyMap {
    /// Bilinear resize to image resolution. The result is not marked
    /// normalized since resampling can lower the peak.
    pub fn upsampled(&self, height: usize, width: usize) -> Self {
        Self {
            grid: upsample_bilinear(&self.grid, height, width),
            resolution: Resolution::Image,
            normalized: false,
        }
    }
}
