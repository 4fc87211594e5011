use std::path::Path;
use std::sync::Arc;

use finercam_core::backend::ModelBackend;
use finercam_core::cam::FeatureStack;
use finercam_core::grid::Image;
use finercam_core::head::{load_head, ClassifierHead};
use finercam_core::tensor_store::{Dataset, SampleRecord};

use crate::backend_spec::BackendSpec;
use crate::error::{AppError, AppResult, ErrorKind};

/// A dataset, the head explaining it and an optional model backend.
/// Immutable once opened.
pub struct Workspace {
    pub dataset: Dataset,
    pub head: ClassifierHead,
    pub backend: Option<Arc<dyn ModelBackend>>,
}

pub struct LoadedSample<'a> {
    pub record: &'a SampleRecord,
    pub features: FeatureStack,
    pub image: Image,
}

impl Workspace {
    pub fn new(dataset: Dataset, head: ClassifierHead, backend: Option<Arc<dyn ModelBackend>>) -> AppResult<Self> {
        let m = &dataset.manifest;
        if head.dim() != m.num_channels() {
            return Err(AppError::input(format!(
                "head expects {} channels, dataset has {}",
                head.dim(),
                m.num_channels()
            )));
        }
        if head.num_classes() != m.num_classes() {
            return Err(AppError::input(format!(
                "head has {} classes, dataset has {}",
                head.num_classes(),
                m.num_classes()
            )));
        }
        if let Some(b) = &backend {
            let d = b.descriptor();
            if d.input_shape != m.image_shape {
                return Err(AppError::input(format!(
                    "backend input {:?} does not match images {:?}",
                    d.input_shape, m.image_shape
                )));
            }
            let shape = d.feature_shape(&m.layer_name).map_err(AppError::input)?;
            if shape != m.feature_shape {
                return Err(AppError::input(format!(
                    "backend layer {} is {:?}, dataset features are {:?}",
                    m.layer_name, shape, m.feature_shape
                )));
            }
        }
        Ok(Self { dataset, head, backend })
    }

    pub fn open(manifest: &Path, head: &Path, backend: Option<&BackendSpec>) -> AppResult<Self> {
        let dataset = Dataset::open(manifest).map_err(AppError::input)?;
        let head = load_head(head).map_err(AppError::input)?;
        let backend = backend.map(|b| b.connect(&head)).transpose()?;
        Self::new(dataset, head, backend)
    }

    pub fn backend(&self, what: &str) -> AppResult<&dyn ModelBackend> {
        self.backend
            .as_deref()
            .ok_or_else(|| AppError::new(ErrorKind::Unavailable, format!("{what} needs a model backend")))
    }

    pub fn load_sample(&self, sample_id: &str) -> AppResult<LoadedSample<'_>> {
        let record = self
            .dataset
            .sample(sample_id)
            .map_err(|e| AppError::new(ErrorKind::NotFound, e.to_string()))?;
        let features = FeatureStack::from_tensor(&self.dataset.features(record).map_err(AppError::input)?)
            .map_err(AppError::input)?;
        let image = Image::from_tensor(&self.dataset.image(record).map_err(AppError::input)?).map_err(AppError::input)?;
        Ok(LoadedSample {
            record,
            features,
            image,
        })
    }
}
