use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{auc, deletion_curve, pointing_game, relative_drop, EvalError, Fill, DEFAULT_STEP, RD_FRACTIONS};
use crate::backend::ModelBackend;
use crate::cam::{
    explain, normalize, Activation, Aggregation, ExplanationTarget, FeatureStack, Method, ModelContext,
    DEFAULT_GAMMA, DEFAULT_REFERENCE_COUNT,
};
use crate::grid::{Grid, Image};
use crate::head::{rank_by_weight_similarity, rank_reference_classes, ClassifierHead};
use crate::tensor_store::BBox;

/// How comparison classes are chosen for an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePolicy {
    pub count: usize,
    /// Rank by head-row cosine similarity instead of the image's logits.
    #[serde(default)]
    pub by_weight_similarity: bool,
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        Self {
            count: DEFAULT_REFERENCE_COUNT,
            by_weight_similarity: false,
        }
    }
}

impl ReferencePolicy {
    pub fn select(
        &self,
        logits: &[f32],
        head: Option<&ClassifierHead>,
        target: usize,
    ) -> Result<Vec<usize>, EvalError> {
        if self.by_weight_similarity {
            let head = head.ok_or(EvalError::Attribute("weight-similarity ranking needs a head".into()))?;
            Ok(rank_by_weight_similarity(head, target, self.count)?)
        } else {
            Ok(rank_reference_classes(logits, target, self.count)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub method: Method,
    /// Compare against reference classes; `false` evaluates the baseline.
    pub finer: bool,
    pub gamma: f32,
    pub references: ReferencePolicy,
    pub aggregation: Aggregation,
    pub activation: Activation,
    pub step: f64,
    pub rd_fractions: Vec<f64>,
    pub fill: Fill,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            method: Method::Grad,
            finer: true,
            gamma: DEFAULT_GAMMA,
            references: ReferencePolicy::default(),
            aggregation: Aggregation::AvgBeforeAct,
            activation: Activation::Relu,
            step: DEFAULT_STEP,
            rd_fractions: RD_FRACTIONS.to_vec(),
            fill: Fill::Zero,
        }
    }
}

impl EvalConfig {
    pub fn baseline(method: Method) -> Self {
        Self {
            method,
            finer: false,
            ..Self::default()
        }
    }
}

/// One image with its final-layer features and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalSample<'a> {
    pub sample_id: &'a str,
    pub image: &'a Image,
    pub features: &'a FeatureStack,
    pub label: usize,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub aggregate: bool,
    pub num_images: usize,
    pub deletion_auc: f64,
    /// Keyed by the masked fraction, e.g. `"0.05"`.
    pub rd_at: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointing_game: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_image: Vec<EvalReport>,
}

impl EvalReport {
    pub fn rd(&self, fraction: f64) -> Option<f64> {
        self.rd_at.get(&fraction_key(fraction)).copied()
    }
}

pub fn fraction_key(f: f64) -> String {
    format!("{f}")
}

/// Normalized image-resolution saliency for `sample` explained as `label`,
/// plus the reference classes used.
pub fn sample_saliency(
    backend: &dyn ModelBackend,
    head: Option<&ClassifierHead>,
    sample: &EvalSample<'_>,
    logits: &[f32],
    config: &EvalConfig,
) -> Result<(Grid, Vec<usize>), EvalError> {
    let refs = if config.finer {
        config.references.select(logits, head, sample.label)?
    } else {
        Vec::new()
    };
    let target = ExplanationTarget {
        activation: config.activation,
        aggregation: config.aggregation,
        ..ExplanationTarget::finer(sample.label, &refs, config.gamma, config.method)
    };
    let ctx = ModelContext {
        backend,
        image: sample.image,
        layer: None,
        baseline: None,
    };
    let map = explain(sample.features, head, &target, Some(&ctx))?;
    let up = map.upsampled(sample.image.height(), sample.image.width());
    Ok((normalize(&up)?.grid, refs))
}

/// Deletion AUC, relative drop at each configured fraction against the
/// runner-up class, and the pointing game when a box is given.
pub fn evaluate_sample(
    backend: &dyn ModelBackend,
    head: Option<&ClassifierHead>,
    sample: &EvalSample<'_>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let logits = backend.logits(sample.image)?;
    let (saliency, _) = sample_saliency(backend, head, sample, &logits, config)?;
    let runner_up = rank_reference_classes(&logits, sample.label, 1)?[0];
    let curve = deletion_curve(
        backend,
        sample.image,
        &saliency,
        config.step,
        &config.fill,
        sample.label,
        Some(runner_up),
    )?;
    let mut rd_at = BTreeMap::new();
    for &f in &config.rd_fractions {
        let rd = relative_drop(backend, sample.image, &saliency, sample.label, runner_up, f, &config.fill)?;
        rd_at.insert(fraction_key(f), rd);
    }
    let pointing_game = sample.bbox.map(|b| pointing_game(&saliency, &b)).transpose()?;
    Ok(EvalReport {
        sample_id: Some(sample.sample_id.to_string()),
        aggregate: false,
        num_images: 1,
        deletion_auc: auc(&curve)?,
        rd_at,
        pointing_game,
        per_image: Vec::new(),
    })
}

/// Mean of the per-image metrics. The pointing game is averaged over the
/// images that have a bounding box.
pub fn evaluate<'a>(
    backend: &dyn ModelBackend,
    head: Option<&ClassifierHead>,
    samples: impl IntoIterator<Item = EvalSample<'a>>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let per_image = samples
        .into_iter()
        .map(|s| evaluate_sample(backend, head, &s, config))
        .collect::<Result<Vec<_>, _>>()?;
    if per_image.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = per_image.len() as f64;
    let deletion_auc = per_image.iter().map(|r| r.deletion_auc).sum::<f64>() / n;
    let mut rd_at = BTreeMap::new();
    for key in per_image[0].rd_at.keys() {
        let mean = per_image.iter().map(|r| r.rd_at[key]).sum::<f64>() / n;
        rd_at.insert(key.clone(), mean);
    }
    let pg: Vec<f64> = per_image.iter().filter_map(|r| r.pointing_game).collect();
    let pointing_game = (!pg.is_empty()).then(|| pg.iter().sum::<f64>() / pg.len() as f64);
    Ok(EvalReport {
        sample_id: None,
        aggregate: true,
        num_images: per_image.len(),
        deletion_auc,
        rd_at,
        pointing_game,
        per_image,
    })
}
