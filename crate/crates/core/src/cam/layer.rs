use super::{Activation, CamError, FeatureStack, SaliencyMap};
use crate::grid::Grid;

/// `sum_k ReLU(g_k) * A_k` elementwise, before the outer activation.
pub fn layercam_raw(features: &FeatureStack, grads: &FeatureStack) -> Result<Grid, CamError> {
    features.same_shape(grads)?;
    let mut out = vec![0f32; features.grid_count()];
    for k in 0..features.channels() {
        for ((o, &a), &g) in out.iter_mut().zip(features.channel(k)).zip(grads.channel(k)) {
            if g > 0.0 {
                *o += g * a;
            }
        }
    }
    Ok(Grid::new(features.height(), features.width(), out)?)
}

pub fn layercam_map(features: &FeatureStack, grads: &FeatureStack) -> Result<SaliencyMap, CamError> {
    Ok(super::activate(&layercam_raw(features, grads)?, Activation::Relu))
}

/// Gradient stack for the layer feeding a global-average-pool + linear
/// head: every cell of channel `k` holds `row_k / Z`.
pub fn uniform_gradients(shape: [usize; 3], row: &[f32]) -> Result<FeatureStack, CamError> {
    let [k, h, w] = shape;
    if row.len() != k {
        return Err(CamError::LengthMismatch {
            expected: k,
            actual: row.len(),
        });
    }
    let z = (h * w) as f32;
    let data = row
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v / z, h * w))
        .collect();
    Ok(FeatureStack::new(k, h, w, data)?)
}
