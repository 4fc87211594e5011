use super::{upsample_bilinear, CamError, ChannelWeights, FeatureStack};
use crate::backend::ModelBackend;
use crate::grid::{Grid, Image};

/// One mask per channel: min-max normalized to `[0, 1]` and resized to
/// the image. Constant channels give an all-zero mask.
pub fn channel_masks(features: &FeatureStack, height: usize, width: usize) -> Vec<Grid> {
    (0..features.channels())
        .map(|k| {
            let g = features.channel_grid(k);
            let (lo, hi) = (g.min(), g.max());
            let norm = if hi > lo {
                g.map(|v| (v - lo) / (hi - lo))
            } else {
                Grid::zeros(g.height(), g.width())
            };
            upsample_bilinear(&norm, height, width)
        })
        .collect()
}

fn baseline_logits(backend: &dyn ModelBackend, image: &Image, baseline: Option<&Image>) -> Result<Vec<f32>, CamError> {
    let zero;
    let b = match baseline {
        Some(b) => b,
        None => {
            zero = image.zeros_like();
            &zero
        }
    };
    Ok(backend.logits(b)?)
}

/// Score-CAM weights from precomputed features.
///
/// Without a reference `alpha_k = f(x*H_k)^c - f(x_b)^c`; with reference
/// `(d, gamma)` it is `f(x*H_k)^c - gamma * f(x*H_k)^d - f(x_b)^c`. The
/// baseline image defaults to all zeros.
pub fn scorecam_weights_for(
    backend: &dyn ModelBackend,
    image: &Image,
    features: &FeatureStack,
    class: usize,
    reference: Option<(usize, f32)>,
    baseline: Option<&Image>,
) -> Result<ChannelWeights, CamError> {
    let n = backend.descriptor().num_classes;
    for c in std::iter::once(class).chain(reference.map(|r| r.0)) {
        if c >= n {
            return Err(crate::backend::BackendError::ClassOutOfRange { class: c, num_classes: n }.into());
        }
    }
    let base = baseline_logits(backend, image, baseline)?[class];
    let mut alpha = Vec::with_capacity(features.channels());
    for mask in channel_masks(features, image.height(), image.width()) {
        let y = backend.masked_forward(image, &mask)?;
        let score = match reference {
            Some((d, gamma)) => (y[class] - gamma * y[d]) - base,
            None => y[class] - base,
        };
        alpha.push(score);
    }
    ChannelWeights::new(alpha)
}

/// Score-CAM weights at the final layer.
pub fn scorecam_weights(
    backend: &dyn ModelBackend,
    image: &Image,
    class: usize,
    baseline: Option<&Image>,
) -> Result<ChannelWeights, CamError> {
    let layer = backend.descriptor().final_layer().to_string();
    let features = backend.forward(image, &layer)?.features;
    scorecam_weights_for(backend, image, &features, class, None, baseline)
}

pub fn finer_scorecam_weights(
    backend: &dyn ModelBackend,
    image: &Image,
    class: usize,
    reference: usize,
    gamma: f32,
    baseline: Option<&Image>,
) -> Result<ChannelWeights, CamError> {
    let layer = backend.descriptor().final_layer().to_string();
    let features = backend.forward(image, &layer)?.features;
    scorecam_weights_for(backend, image, &features, class, Some((reference, gamma)), baseline)
}
