//! Tensor persistence: the FCT container and dataset manifests.

mod fct;
mod manifest;

use std::path::PathBuf;

pub use fct::{read_tensor, write_tensor, DType, TensorData, TensorFile, MAGIC, MAX_NDIM};
pub use manifest::{
    load_manifest, save_manifest, BBox, Dataset, DatasetManifest, SampleRecord, Split,
    MANIFEST_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:02x?}, expected \"FCT1\"")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("ndim {0} outside 1..=4")]
    BadRank(usize),
    #[error("nonzero header padding")]
    BadPadding,
    #[error("dimension of size zero")]
    ZeroDimension,
    #[error("dimension product overflows")]
    DimensionOverflow,
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("payload has {actual} scalars but shape implies {expected}")]
    PayloadMismatch { expected: usize, actual: usize },
    #[error("manifest schema violation: {0}")]
    Schema(String),
    #[error("sample {sample}: referenced file {path} does not exist")]
    DanglingReference { sample: String, path: PathBuf },
    #[error("sample {sample}: class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange {
        sample: String,
        class_id: usize,
        num_classes: usize,
    },
    #[error("sample {sample}: bbox {bbox:?} invalid for image {width}x{height}")]
    BBoxOutOfBounds {
        sample: String,
        bbox: [u32; 4],
        width: usize,
        height: usize,
    },
    #[error("{path}: expected {expected:?} {expected_dtype:?}, found {actual:?} {actual_dtype:?}")]
    TensorMismatch {
        path: PathBuf,
        expected: Vec<usize>,
        expected_dtype: DType,
        actual: Vec<usize>,
        actual_dtype: DType,
    },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("unknown sample id {0}")]
    UnknownSample(String),
}
