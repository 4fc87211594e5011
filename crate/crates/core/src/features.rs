use crate::grid::{Grid, ShapeError};
use crate::tensor_store::{StoreError, TensorFile};

/// `K` channel maps of size `H x W` stored channel-major, plus each
/// channel's spatial mean.
///
/// The same container carries per-location gradients, in which case the
/// channel means are exactly the Grad-CAM weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    pooled: Vec<f32>,
}

fn channel_mean(map: &[f32]) -> f32 {
    (map.iter().map(|&v| v as f64).sum::<f64>() / map.len() as f64) as f32
}

impl FeatureStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(ShapeError::new(&[channels, height, width], &[data.len()]));
        }
        let pooled = data.chunks_exact(height * width).map(channel_mean).collect();
        Ok(Self {
            channels,
            height,
            width,
            data,
            pooled,
        })
    }

    pub fn from_maps(maps: &[Grid]) -> Result<Self, ShapeError> {
        let first = maps.first().ok_or_else(|| ShapeError::new(&[1], &[0]))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            first.same_shape(m)?;
            data.extend_from_slice(m.as_slice());
        }
        Self::new(maps.len(), h, w, data)
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self, StoreError> {
        let (k, h, w) = match t.shape() {
            [k, h, w] => (*k, *h, *w),
            other => return Err(StoreError::Schema(format!("expected [K, H, W], got {other:?}"))),
        };
        let data = t
            .as_f32()
            .ok_or_else(|| StoreError::Schema("feature tensor must be f32".into()))?;
        Ok(Self::new(k, h, w, data.to_vec()).expect("checked by tensor"))
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::from_f32(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("valid stack")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[K, H, W]`
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Grid count `Z = H * W`.
    pub fn grid_count(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let z = self.grid_count();
        &self.data[k * z..(k + 1) * z]
    }

    pub fn channel_grid(&self, k: usize) -> Grid {
        Grid::new(self.height, self.width, self.channel(k).to_vec()).expect("valid stack")
    }

    pub fn pooled(&self) -> &[f32] {
        &self.pooled
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn same_shape(&self, other: &FeatureStack) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError::new(&self.shape(), &other.shape()));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &FeatureStack) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
