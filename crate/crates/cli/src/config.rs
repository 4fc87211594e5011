//! Service configuration, read from `--config` or `FINERCAM_CONFIG`.
//!
//! ```json
//! {
//!   "manifest": "data/manifest.json",
//!   "head": "data/head.json",
//!   "backend": "data/backend.json",
//!   "bind": "127.0.0.1:8080",
//!   "static_dir": "ui/dist"
//! }
//! ```
//!
//! `backend` is either a path to a backend file or the backend object
//! itself, and may be omitted. Relative paths resolve against the
//! directory of the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend_spec::BackendSpec;
use crate::error::{AppError, AppResult};

pub const CONFIG_ENV: &str = "FINERCAM_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendRef {
    File(PathBuf),
    Inline(BackendSpec),
}

fn default_bind() -> String {
    DEFAULT_BIND.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub head: PathBuf,
    #[serde(default)]
    pub backend: Option<BackendRef>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::input(format!("{}: {e}", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| AppError::input(format!("{}: {e}", path.display())))?;
        Ok(config.resolved(path.parent().unwrap_or(Path::new("."))))
    }

    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.head);
        if let Some(d) = &mut self.static_dir {
            fix(d);
        }
        match &mut self.backend {
            Some(BackendRef::File(p)) => fix(p),
            Some(BackendRef::Inline(spec)) => *spec = spec.clone().resolved(base),
            None => {}
        }
        self
    }

    pub fn backend_spec(&self) -> AppResult<Option<BackendSpec>> {
        match &self.backend {
            None => Ok(None),
            Some(BackendRef::Inline(s)) => Ok(Some(s.clone())),
            Some(BackendRef::File(p)) => BackendSpec::load(p).map(Some),
        }
    }

    /// Every referenced file must exist before the service starts.
    pub fn validate(&self) -> AppResult<()> {
        for p in [&self.manifest, &self.head] {
            if !p.is_file() {
                return Err(AppError::input(format!("{} does not exist", p.display())));
            }
        }
        if let Some(d) = &self.static_dir {
            if !d.is_dir() {
                return Err(AppError::input(format!("static dir {} does not exist", d.display())));
            }
        }
        if let Some(BackendSpec::BuiltinToy { network }) = self.backend_spec()? {
            if !network.is_file() {
                return Err(AppError::input(format!("{} does not exist", network.display())));
            }
        }
        Ok(())
    }
}
