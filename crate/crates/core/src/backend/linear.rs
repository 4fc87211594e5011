//! A backend whose logits are affine in the pixels, for closed-form checks.

use super::{BackendDescriptor, BackendError, BackendKind, ForwardOutput, ModelBackend};
use crate::features::FeatureStack;
use crate::grid::{Image, ShapeError};

/// `y^c = sum_p P[c][p] * x[p] + b_c` over all `H * W * channels` scalars.
///
/// The single layer `pixels` exposes the image channels average-pooled by
/// `pool`, giving `[channels, H / pool, W / pool]` feature maps.
#[derive(Debug, Clone)]
pub struct LinearPixelBackend {
    pixel_weights: Vec<f32>,
    bias: Vec<f32>,
    pool: usize,
    descriptor: BackendDescriptor,
}

pub const LINEAR_LAYER: &str = "pixels";

impl LinearPixelBackend {
    pub fn new(
        input_shape: [usize; 3],
        pixel_weights: Vec<f32>,
        bias: Vec<f32>,
        pool: usize,
    ) -> Result<Self, BackendError> {
        let [h, w, c] = input_shape;
        let n = h * w * c;
        let classes = bias.len();
        if classes == 0 || pixel_weights.len() != classes * n {
            return Err(ShapeError::new(&[classes, n], &[pixel_weights.len()]).into());
        }
        if pool == 0 || h % pool != 0 || w % pool != 0 {
            return Err(ShapeError::new(&[h, w], &[pool]).into());
        }
        let descriptor = BackendDescriptor {
            kind: BackendKind::BuiltinToy,
            layer_names: vec![LINEAR_LAYER.into()],
            input_shape,
            feature_shapes: vec![[c, h / pool, w / pool]],
            num_classes: classes,
            seed: None,
        };
        Ok(Self {
            pixel_weights,
            bias,
            pool,
            descriptor,
        })
    }

    /// Every class sums all pixel values with weight 1.
    pub fn pixel_sum(input_shape: [usize; 3], num_classes: usize, pool: usize) -> Result<Self, BackendError> {
        let n = input_shape.iter().product::<usize>();
        Self::new(input_shape, vec![1.0; n * num_classes], vec![0.0; num_classes], pool)
    }

    pub fn class_weights(&self, class: usize) -> &[f32] {
        let n = self.pixel_weights.len() / self.bias.len();
        &self.pixel_weights[class * n..(class + 1) * n]
    }

    fn features(&self, image: &Image) -> Result<FeatureStack, BackendError> {
        let [c, oh, ow] = self.descriptor.feature_shapes[0];
        let p = self.pool;
        let inv = 1.0 / (p * p) as f32;
        let mut data = vec![0f32; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0f32;
                    for dy in 0..p {
                        for dx in 0..p {
                            acc += image.pixel(y * p + dy, x * p + dx)[ch];
                        }
                    }
                    data[(ch * oh + y) * ow + x] = acc * inv;
                }
            }
        }
        Ok(FeatureStack::new(c, oh, ow, data)?)
    }
}

impl ModelBackend for LinearPixelBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError> {
        self.descriptor.check_image(image)?;
        self.descriptor.layer_index(layer)?;
        let x = image.as_slice();
        let logits = (0..self.bias.len())
            .map(|c| {
                self.class_weights(c)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f32>()
                    + self.bias[c]
            })
            .collect();
        Ok(ForwardOutput {
            features: self.features(image)?,
            logits,
        })
    }
}
