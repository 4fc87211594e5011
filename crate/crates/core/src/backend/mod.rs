//! The model contract: image -> feature maps at a named layer -> logits.
//!
//! Every backend supports forward passes. Only the built-in toy network
//! also returns exact gradients of logit combinations with respect to an
//! intermediate layer; external backends are forward-only and gradient
//! math on them goes through the final-layer head identity instead.

mod external;
mod linear;
pub mod protocol;
mod toy;
mod with_head;

use serde::{Deserialize, Serialize};

pub use external::ExternalBackend;
pub use linear::LinearPixelBackend;
pub use toy::{ConvStage, Nonlinearity, StageSpec, ToyCnn, ToyNetwork};
pub use with_head::WithHead;

use crate::features::FeatureStack;
use crate::grid::{Grid, Image, ShapeError};
use crate::head::HeadError;
use crate::tensor_store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    BuiltinToy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Ordered from input to output; the last entry feeds the head.
    pub layer_names: Vec<String>,
    /// `[H_img, W_img, channels]`
    pub input_shape: [usize; 3],
    /// `[K, H, W]` per entry of `layer_names`.
    pub feature_shapes: Vec<[usize; 3]>,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl BackendDescriptor {
    pub fn final_layer(&self) -> &str {
        self.layer_names.last().map(String::as_str).unwrap_or("")
    }

    pub fn layer_index(&self, layer: &str) -> Result<usize, BackendError> {
        self.layer_names
            .iter()
            .position(|l| l == layer)
            .ok_or_else(|| BackendError::UnknownLayer(layer.to_string()))
    }

    pub fn feature_shape(&self, layer: &str) -> Result<[usize; 3], BackendError> {
        Ok(self.feature_shapes[self.layer_index(layer)?])
    }

    pub fn check_image(&self, image: &Image) -> Result<(), BackendError> {
        if image.shape() != self.input_shape {
            return Err(ShapeError::new(&self.input_shape, &image.shape()).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: FeatureStack,
    pub logits: Vec<f32>,
}

/// A scalar target `sum_i coeff_i * y^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitCombination {
    pub terms: Vec<(usize, f32)>,
}

impl LogitCombination {
    pub fn single(class: usize) -> Self {
        Self {
            terms: vec![(class, 1.0)],
        }
    }

    /// `y^target - gamma * y^reference`
    pub fn difference(target: usize, reference: usize, gamma: f32) -> Self {
        Self {
            terms: vec![(target, 1.0), (reference, -gamma)],
        }
    }

    pub fn evaluate(&self, logits: &[f32]) -> f32 {
        self.terms.iter().map(|&(c, a)| a * logits[c]).sum()
    }

    pub fn check(&self, num_classes: usize) -> Result<(), BackendError> {
        match self.terms.iter().find(|(c, _)| *c >= num_classes) {
            Some(&(class, _)) => Err(BackendError::ClassOutOfRange { class, num_classes }),
            None => Ok(()),
        }
    }

    /// `sum_i coeff_i * row_i` over head rows.
    pub fn combine_rows(&self, rows: impl Fn(usize) -> Vec<f32>, dim: usize) -> Vec<f32> {
        let mut out = vec![0f32; dim];
        for &(c, a) in &self.terms {
            for (o, w) in out.iter_mut().zip(rows(c)) {
                *o += a * w;
            }
        }
        out
    }
}

pub trait ModelBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Features at `layer` plus logits for `image`.
    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError>;

    fn logits(&self, image: &Image) -> Result<Vec<f32>, BackendError> {
        let layer = self.descriptor().final_layer().to_string();
        self.forward(image, &layer).map(|o| o.logits)
    }

    /// Logits of `image` with `mask` broadcast across channels.
    fn masked_forward(&self, image: &Image, mask: &Grid) -> Result<Vec<f32>, BackendError> {
        self.logits(&image.apply_mask(mask)?)
    }

    /// Exact gradients of `target` with respect to every feature grid cell
    /// at `layer`, in a [`FeatureStack`] whose channel means are the
    /// Grad-CAM weights.
    fn grad_features(
        &self,
        _image: &Image,
        _layer: &str,
        _target: &LogitCombination,
    ) -> Result<FeatureStack, BackendError> {
        Err(BackendError::Unsupported("gradient evaluation"))
    }

    fn supports_gradients(&self) -> bool {
        false
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError> {
        (**self).forward(image, layer)
    }
    fn logits(&self, image: &Image) -> Result<Vec<f32>, BackendError> {
        (**self).logits(image)
    }
    fn masked_forward(&self, image: &Image, mask: &Grid) -> Result<Vec<f32>, BackendError> {
        (**self).masked_forward(image, mask)
    }
    fn grad_features(
        &self,
        image: &Image,
        layer: &str,
        target: &LogitCombination,
    ) -> Result<FeatureStack, BackendError> {
        (**self).grad_features(image, layer, target)
    }
    fn supports_gradients(&self) -> bool {
        (**self).supports_gradients()
    }
}
