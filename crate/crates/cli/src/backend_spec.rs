//! Backend selection files.
//!
//! ```json
//! {"kind": "builtin_toy", "network": "network.json"}
//! {"kind": "external", "command": ["python", "-m", "extractor", "serve", "--job", "job.json"]}
//! {"kind": "external_tcp", "address": "127.0.0.1:7070"}
//! ```
//!
//! Relative paths resolve against the directory of the file. Logits from
//! external backends are recomputed with the loaded head so that saliency
//! and confidences always refer to the same classifier.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use finercam_core::backend::{ExternalBackend, ModelBackend, ToyCnn, ToyNetwork, WithHead};
use finercam_core::head::ClassifierHead;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    BuiltinToy { network: PathBuf },
    External { command: Vec<String> },
    ExternalTcp { address: String },
}

impl BackendSpec {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::input(format!("{}: {e}", path.display())))?;
        let spec: Self =
            serde_json::from_str(&text).map_err(|e| AppError::input(format!("{}: {e}", path.display())))?;
        Ok(spec.resolved(path.parent().unwrap_or(Path::new("."))))
    }

    pub fn resolved(self, base: &Path) -> Self {
        match self {
            BackendSpec::BuiltinToy { network } if network.is_relative() => BackendSpec::BuiltinToy {
                network: base.join(network),
            },
            other => other,
        }
    }

    pub fn connect(&self, head: &ClassifierHead) -> AppResult<Arc<dyn ModelBackend>> {
        match self {
            BackendSpec::BuiltinToy { network } => {
                let text = std::fs::read_to_string(network)
                    .map_err(|e| AppError::input(format!("{}: {e}", network.display())))?;
                let net: ToyNetwork = serde_json::from_str(&text)
                    .map_err(|e| AppError::input(format!("{}: {e}", network.display())))?;
                Ok(Arc::new(ToyCnn::new(net, head.clone()).map_err(AppError::input)?))
            }
            BackendSpec::External { command } => {
                let remote = ExternalBackend::spawn(command).map_err(AppError::compute)?;
                Ok(Arc::new(WithHead::new(remote, head.clone()).map_err(AppError::input)?))
            }
            BackendSpec::ExternalTcp { address } => {
                let remote = ExternalBackend::connect_tcp(address).map_err(AppError::compute)?;
                Ok(Arc::new(WithHead::new(remote, head.clone()).map_err(AppError::input)?))
            }
        }
    }
}
