use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_tensor, DType, StoreError, TensorFile};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Pixel box `[x0, y0, x1, y1)`, serialized as a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [u32; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn is_valid_for(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 as usize <= width
            && self.y1 as usize <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0 as usize..self.x1 as usize).contains(&x)
            && (self.y0 as usize..self.y1 as usize).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub class_id: usize,
    pub feature_path: PathBuf,
    pub image_path: PathBuf,
    pub bbox: Option<BBox>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub samples: Vec<SampleRecord>,
    pub layer_name: String,
    /// `[K, H, W]`
    pub feature_shape: [usize; 3],
    /// `[H_img, W_img, channels]`
    pub image_shape: [usize; 3],
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_channels(&self) -> usize {
        self.feature_shape[0]
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Checks every invariant that does not need the filesystem.
    pub fn validate_records(&self) -> Result<(), StoreError> {
        if self.version != MANIFEST_VERSION {
            return Err(StoreError::Schema(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.classes.is_empty() {
            return Err(StoreError::Schema("no classes".into()));
        }
        if self.feature_shape.contains(&0) || self.image_shape.contains(&0) {
            return Err(StoreError::Schema("zero-sized feature or image shape".into()));
        }
        let [height, width, _] = self.image_shape;
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(StoreError::DuplicateSample(s.sample_id.clone()));
            }
            if s.class_id >= self.classes.len() {
                return Err(StoreError::ClassOutOfRange {
                    sample: s.sample_id.clone(),
                    class_id: s.class_id,
                    num_classes: self.classes.len(),
                });
            }
            if let Some(b) = s.bbox {
                if !b.is_valid_for(width, height) {
                    return Err(StoreError::BBoxOutOfBounds {
                        sample: s.sample_id.clone(),
                        bbox: b.into(),
                        width,
                        height,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_tensor(
    path: &Path,
    tensor: &TensorFile,
    shape: &[usize],
    dtype: DType,
) -> Result<(), StoreError> {
    if tensor.shape() != shape || tensor.dtype() != dtype {
        return Err(StoreError::TensorMismatch {
            path: path.to_path_buf(),
            expected: shape.to_vec(),
            expected_dtype: dtype,
            actual: tensor.shape().to_vec(),
            actual_dtype: tensor.dtype(),
        });
    }
    Ok(())
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Reads and fully validates a manifest, including every referenced tensor.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, StoreError> {
    Dataset::open(path).map(|d| d.manifest)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<(), StoreError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| StoreError::Schema(e.to_string()))?;
    fs::write(path, json).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A validated manifest together with the directory its relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Schema(e.to_string()))?;
        let dataset = Self {
            root: manifest_root(path),
            manifest,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&self) -> Result<(), StoreError> {
        self.manifest.validate_records()?;
        for s in &self.manifest.samples {
            for rel in [&s.feature_path, &s.image_path] {
                let full = self.root.join(rel);
                if !full.is_file() {
                    return Err(StoreError::DanglingReference {
                        sample: s.sample_id.clone(),
                        path: full,
                    });
                }
            }
            self.features(s)?;
            self.image(s)?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sample(&self, sample_id: &str) -> Result<&SampleRecord, StoreError> {
        self.manifest
            .sample(sample_id)
            .ok_or_else(|| StoreError::UnknownSample(sample_id.to_string()))
    }

    /// Feature tensor `[K, H, W]` f32 for a sample.
    pub fn features(&self, sample: &SampleRecord) -> Result<TensorFile, StoreError> {
        let path = self.root.join(&sample.feature_path);
        let t = read_tensor(&path)?;
        check_tensor(&path, &t, &self.manifest.feature_shape, DType::F32)?;
        Ok(t)
    }

    /// Image tensor `[H_img, W_img, channels]` u8 for a sample.
    pub fn image(&self, sample: &SampleRecord) -> Result<TensorFile, StoreError> {
        let path = self.root.join(&sample.image_path);
        let t = read_tensor(&path)?;
        check_tensor(&path, &t, &self.manifest.image_shape, DType::U8)?;
        Ok(t)
    }
}
