//! The work behind each subcommand, callable without a process boundary.

use std::path::{Path, PathBuf};

use finercam_core::cam::FeatureStack;
use finercam_core::eval::{evaluate, EvalConfig, EvalError, EvalReport, EvalSample, SynthBenchmark, SynthSpec};
use finercam_core::grid::Image;
use finercam_core::head::{save_head, train_head, weight_similarity_profile, EmbeddingSet, HeadError, TrainConfig};
use finercam_core::head::load_head;
use finercam_core::tensor_store::{write_tensor, Dataset, Split};

use crate::backend_spec::BackendSpec;
use crate::error::{AppError, AppResult};
use crate::request::{run_explain, ExplainRequest, Explanation};
use crate::workspace::Workspace;

pub const BACKEND_FILE: &str = "backend.json";

fn write_file(path: &Path, bytes: &[u8]) -> AppResult<()> {
    std::fs::write(path, bytes).map_err(|e| AppError::input(format!("{}: {e}", path.display())))
}

/// Generates the synthetic benchmark into `dir`, including a
/// `backend.json` that points at the generated backbone.
pub fn synth(dir: &Path, spec: &SynthSpec) -> AppResult<()> {
    let bench = SynthBenchmark::generate(spec).map_err(|e| AppError::usage(e.to_string()))?;
    bench.write_to(dir).map_err(AppError::input)?;
    let backend = BackendSpec::BuiltinToy {
        network: PathBuf::from("network.json"),
    };
    let json = serde_json::to_string_pretty(&backend).expect("serializable");
    write_file(&dir.join(BACKEND_FILE), json.as_bytes())
}

/// `backend.json` next to the manifest, when present.
pub fn default_backend(manifest: &Path) -> Option<PathBuf> {
    let p = manifest.parent().unwrap_or(Path::new(".")).join(BACKEND_FILE);
    p.is_file().then_some(p)
}

pub fn open_workspace(manifest: &Path, head: &Path, backend: Option<&Path>) -> AppResult<Workspace> {
    let spec = match backend.map(Path::to_path_buf).or_else(|| default_backend(manifest)) {
        Some(p) => Some(BackendSpec::load(&p)?),
        None => None,
    };
    Workspace::open(manifest, head, spec.as_ref())
}

/// Pooled embeddings of every sample in `split`.
pub fn embeddings(dataset: &Dataset, split: Split) -> AppResult<EmbeddingSet> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in dataset.manifest.samples_in(split) {
        let features = dataset.features(record).map_err(AppError::input)?;
        let features = FeatureStack::from_tensor(&features).map_err(AppError::input)?;
        data.extend_from_slice(features.pooled());
        labels.push(record.class_id);
    }
    EmbeddingSet::new(data, dataset.manifest.num_channels(), labels, split).map_err(|e| match e {
        HeadError::EmptySet => AppError::input(format!("no {split:?} samples in the manifest").to_lowercase()),
        other => AppError::input(other),
    })
}

pub struct TrainSummary {
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Trains a head on the train split's pooled embeddings and writes it to
/// `out`.
pub fn train(manifest: &Path, out: &Path, config: &TrainConfig) -> AppResult<TrainSummary> {
    config.validate().map_err(|e| AppError::usage(e.to_string()))?;
    let dataset = Dataset::open(manifest).map_err(AppError::input)?;
    let set = embeddings(&dataset, Split::Train)?;
    let head = train_head(&set, dataset.manifest.classes.clone(), config).map_err(AppError::compute)?;
    save_head(out, &head, Some(config)).map_err(AppError::input)?;
    let reloaded = load_head(out).map_err(AppError::input)?;
    let test_accuracy = match embeddings(&dataset, Split::Test) {
        Ok(t) => Some(t.accuracy(&reloaded).map_err(AppError::compute)?),
        Err(_) => None,
    };
    Ok(TrainSummary {
        train_accuracy: set.accuracy(&reloaded).map_err(AppError::compute)?,
        test_accuracy,
    })
}

/// Runs `req` and writes the saliency tensor and, optionally, the overlay.
pub fn explain(ws: &Workspace, req: &ExplainRequest, out: &Path, overlay: Option<&Path>) -> AppResult<Explanation> {
    let e = run_explain(ws, req)?;
    write_tensor(out, &e.saliency.to_tensor()).map_err(AppError::input)?;
    if let Some(p) = overlay {
        write_file(p, &e.overlay_png)?;
    }
    Ok(e)
}

/// Aggregate report over the samples of `split`.
pub fn eval(ws: &Workspace, config: &EvalConfig, split: Split) -> AppResult<EvalReport> {
    let backend = ws.backend("evaluation")?;
    let mut loaded: Vec<(String, Image, FeatureStack, usize, Option<_>)> = Vec::new();
    for record in ws.dataset.manifest.samples_in(split) {
        let s = ws.load_sample(&record.sample_id)?;
        loaded.push((record.sample_id.clone(), s.image, s.features, record.class_id, record.bbox));
    }
    let samples = loaded.iter().map(|(id, image, features, label, bbox)| EvalSample {
        sample_id: id,
        image,
        features,
        label: *label,
        bbox: *bbox,
    });
    evaluate(backend, Some(&ws.head), samples, config).map_err(|e| match e {
        EvalError::Empty => AppError::input(format!("no {split:?} samples to evaluate").to_lowercase()),
        EvalError::Step(_) | EvalError::Fraction(_) => AppError::usage(e.to_string()),
        other => AppError::compute(other),
    })
}

pub fn similarity_csv(head: &Path) -> AppResult<String> {
    let head = load_head(head).map_err(AppError::input)?;
    weight_similarity_profile(&head)
        .map(|p| p.to_csv())
        .map_err(AppError::compute)
}
