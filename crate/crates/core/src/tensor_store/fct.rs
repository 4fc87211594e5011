//! The FCT tensor container.
//!
//! Layout (little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 0..4         | magic `46 43 54 31` (`"FCT1"`)            |
//! | 4            | dtype code: 0 = f32, 1 = f64, 2 = u8      |
//! | 5            | ndim, 1..=4                               |
//! | 6..8         | zero padding                              |
//! | 8..8+4*ndim  | dimension sizes, u32 each, all >= 1       |
//! | rest         | row-major payload                         |

use std::fs;
use std::path::Path;

use super::StoreError;

pub const MAGIC: [u8; 4] = *b"FCT1";
pub const MAX_NDIM: usize = 4;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, StoreError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(StoreError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense tensor with at most four dimensions.
///
/// Construct through [`TensorFile::new`] (or the typed helpers) so the
/// shape/payload invariant always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

fn element_count(shape: &[usize]) -> Result<usize, StoreError> {
    if shape.is_empty() || shape.len() > MAX_NDIM {
        return Err(StoreError::BadRank(shape.len()));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(StoreError::ZeroDimension);
        }
        if d > u32::MAX as usize {
            return Err(StoreError::DimensionOverflow);
        }
        n = n.checked_mul(d).ok_or(StoreError::DimensionOverflow)?;
    }
    Ok(n)
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, StoreError> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(StoreError::PayloadMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, StoreError> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, StoreError> {
        Self::new(shape, TensorData::F64(values))
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self, StoreError> {
        Self::new(shape, TensorData::U8(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.shape.len() + self.data.len() * self.dtype().size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(StoreError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
        }
        let dtype = DType::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(StoreError::BadRank(ndim));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(StoreError::BadPadding);
        }
        let dims_end = HEADER_LEN + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(StoreError::Truncated {
                expected: dims_end,
                actual: bytes.len(),
            });
        }
        let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = element_count(&shape)?;
        let payload_len = count
            .checked_mul(dtype.size())
            .and_then(|n| n.checked_add(dims_end))
            .ok_or(StoreError::DimensionOverflow)?;
        if bytes.len() < payload_len {
            return Err(StoreError::Truncated {
                expected: payload_len,
                actual: bytes.len(),
            });
        }
        if bytes.len() > payload_len {
            return Err(StoreError::TrailingBytes {
                expected: payload_len,
                actual: bytes.len(),
            });
        }
        let payload = &bytes[dims_end..];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { shape, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TensorFile::decode(&bytes)
}
