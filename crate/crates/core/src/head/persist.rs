//! Head files: a JSON sidecar next to FCT tensors for `W` (`[C, K]` f32)
//! and, when present, the bias (`[C]` f32).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassifierHead, HeadError, HeadOrigin, TrainConfig};
use crate::tensor_store::{read_tensor, write_tensor, StoreError, TensorFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSidecar {
    pub class_names: Vec<String>,
    pub origin: HeadOrigin,
    /// Relative to the sidecar's directory.
    pub weights_file: PathBuf,
    pub bias_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub train_config: Option<TrainConfig>,
}

fn io_err(path: &Path, source: std::io::Error) -> HeadError {
    HeadError::Store(StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "head".into());
    PathBuf::from(format!("{stem}.{suffix}"))
}

/// Writes `<stem>.weights.fct`, `<stem>.bias.fct` and the sidecar at `path`.
pub fn save_head(
    path: impl AsRef<Path>,
    head: &ClassifierHead,
    train_config: Option<&TrainConfig>,
) -> Result<(), HeadError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let weights_file = sibling(path, "weights.fct");
    write_tensor(
        dir.join(&weights_file),
        &TensorFile::from_f32(vec![head.num_classes(), head.dim()], head.weights().to_vec())?,
    )?;
    let bias_file = match head.bias() {
        Some(b) => {
            let f = sibling(path, "bias.fct");
            write_tensor(dir.join(&f), &TensorFile::from_f32(vec![b.len()], b.to_vec())?)?;
            Some(f)
        }
        None => None,
    };
    let sidecar = HeadSidecar {
        class_names: head.class_names().to_vec(),
        origin: head.origin(),
        weights_file,
        bias_file,
        seed: train_config.map(|c| c.seed),
        train_config: train_config.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| HeadError::Sidecar(e.to_string()))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn load_head(path: impl AsRef<Path>) -> Result<ClassifierHead, HeadError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let sidecar: HeadSidecar =
        serde_json::from_str(&text).map_err(|e| HeadError::Sidecar(e.to_string()))?;
    let w = read_tensor(dir.join(&sidecar.weights_file))?;
    let (c, k) = match w.shape() {
        [c, k] => (*c, *k),
        other => return Err(HeadError::Invalid(format!("weights shape {other:?}, expected [C, K]"))),
    };
    let weights = w
        .as_f32()
        .ok_or_else(|| HeadError::Invalid("weights must be f32".into()))?
        .to_vec();
    let bias = match &sidecar.bias_file {
        Some(f) => {
            let b = read_tensor(dir.join(f))?;
            Some(
                b.as_f32()
                    .ok_or_else(|| HeadError::Invalid("bias must be f32".into()))?
                    .to_vec(),
            )
        }
        None => None,
    };
    ClassifierHead::new(c, k, weights, bias, sidecar.class_names, sidecar.origin)
}
