use super::{CamError, ChannelWeights};
use crate::backend::{LogitCombination, ModelBackend};
use crate::grid::Image;
use crate::head::ClassifierHead;

/// Grad-CAM weights at the layer feeding a global-average-pool + linear
/// head: `alpha^c_k = w^c_k / Z`.
pub fn gradcam_weights_final_layer(
    head: &ClassifierHead,
    class: usize,
    grid_count: usize,
) -> Result<ChannelWeights, CamError> {
    head.check_class(class)?;
    if grid_count == 0 {
        return Err(CamError::InvalidTarget("grid count must be >= 1".into()));
    }
    let z = grid_count as f32;
    ChannelWeights::new(head.row(class).iter().map(|w| w / z).collect())
}

/// `alpha_k = (1/Z) sum_ij d target / d A_k[i, j]` from backend gradients.
pub fn gradcam_weights_backend(
    backend: &dyn ModelBackend,
    image: &Image,
    layer: &str,
    target: &LogitCombination,
) -> Result<ChannelWeights, CamError> {
    if !backend.supports_gradients() {
        return Err(crate::backend::BackendError::Unsupported("gradient evaluation").into());
    }
    let grads = backend.grad_features(image, layer, target)?;
    ChannelWeights::new(grads.pooled().to_vec())
}

/// `alpha^{c,d}_k = alpha^c_k - gamma * alpha^d_k`.
pub fn finer_weights(
    target: &ChannelWeights,
    reference: &ChannelWeights,
    gamma: f32,
) -> Result<ChannelWeights, CamError> {
    reference.check_len(target.len())?;
    ChannelWeights::new(
        target
            .values()
            .iter()
            .zip(reference.values())
            .map(|(&a, &b)| a - gamma * b)
            .collect(),
    )
}
