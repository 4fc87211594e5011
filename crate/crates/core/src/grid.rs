//! Dense 2-D maps and HWC images.

use crate::tensor_store::{StoreError, TensorData, TensorFile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("shape mismatch: expected {expected:?}, got {actual:?}")]
pub struct ShapeError {
    pub expected: Vec<usize>,
    pub actual: Vec<usize>,
}

impl ShapeError {
    pub fn new(expected: &[usize], actual: &[usize]) -> Self {
        Self {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

/// Row-major `height x width` f32 map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(ShapeError::new(&[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self, ShapeError> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(ShapeError::new(&[rows.len(), width], &[]));
        }
        Self::new(rows.len(), width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn same_shape(&self, other: &Grid) -> Result<(), ShapeError> {
        if self.dims() != other.dims() {
            return Err(ShapeError::new(
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(())
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f32 {
        (self.sum() / self.data.len() as f64) as f32
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::from_f32(vec![self.height, self.width], self.data.clone())
            .expect("grid dimensions are valid")
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self, StoreError> {
        match (t.shape(), t.data()) {
            ([h, w], TensorData::F32(v)) => Ok(Self::new(*h, *w, v.clone()).expect("checked by tensor")),
            _ => Err(StoreError::Schema(format!(
                "expected 2-D f32 tensor, got {:?} {:?}",
                t.shape(),
                t.dtype()
            ))),
        }
    }
}

/// HWC image with f32 intensities; u8 payloads map to `value / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(ShapeError::new(&[height, width, channels], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
            .expect("image dimensions must be positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[H, W, C]`
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.height, self.width, self.channels)
    }

    /// Elementwise product with a spatial mask broadcast over channels.
    pub fn apply_mask(&self, mask: &Grid) -> Result<Self, ShapeError> {
        if mask.dims() != (self.height, self.width) {
            return Err(ShapeError::new(
                &[self.height, self.width],
                &[mask.height(), mask.width()],
            ));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .zip(mask.as_slice())
            .flat_map(|(px, &m)| px.iter().map(move |&v| v * m))
            .collect();
        Ok(Self { data, ..*self })
    }

    /// Per-channel mean intensity.
    pub fn channel_means(&self) -> Vec<f32> {
        let mut sums = vec![0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| (s / n) as f32).collect()
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self, StoreError> {
        let [h, w, c] = match t.shape() {
            [h, w, c] => [*h, *w, *c],
            other => {
                return Err(StoreError::Schema(format!("expected HWC image tensor, got {other:?}")))
            }
        };
        let data = match t.data() {
            TensorData::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        };
        Ok(Self::new(h, w, c, data).expect("checked by tensor"))
    }

    pub fn to_f32_tensor(&self) -> TensorFile {
        TensorFile::from_f32(self.shape().to_vec(), self.data.clone()).expect("valid image")
    }

    /// Quantizes to u8 with rounding and clamping to `[0, 255]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn to_u8_tensor(&self) -> TensorFile {
        TensorFile::from_u8(self.shape().to_vec(), self.to_u8()).expect("valid image")
    }
}
