//! Faithfulness and localization metrics for saliency maps.
//!
//! All pixel-level metrics take saliency at image resolution. Confidences
//! are softmax probabilities of the backend logits.

mod attributes;
mod report;
mod synth;

use serde::{Deserialize, Serialize};

pub use attributes::{select_discriminative_attributes, AttributeTable};
pub use report::{
    evaluate, evaluate_sample, fraction_key, sample_saliency, EvalConfig, EvalReport, EvalSample, ReferencePolicy,
};
pub use synth::{class_pair_mask, SampleTruth, SynthBenchmark, SynthSample, SynthSpec};

use crate::backend::{BackendError, ModelBackend};
use crate::cam::CamError;
use crate::grid::{Grid, Image, ShapeError};
use crate::head::{softmax, HeadError};
use crate::tensor_store::{BBox, StoreError};

pub const DEFAULT_STEP: f64 = 0.02;
pub const RD_FRACTIONS: [f64; 2] = [0.05, 0.10];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cam(#[from] CamError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("fraction {0} outside the allowed range")]
    Fraction(f64),
    #[error("deletion step {0} outside (0, 1]")]
    Step(f64),
    #[error("a curve needs at least two points")]
    ShortCurve,
    #[error("target and reference are both class {0}")]
    SameClass(usize),
    #[error("bbox {0:?} does not fit a {1}x{2} map")]
    BBox(BBox, usize, usize),
    #[error("saliency has negative entries")]
    NegativeSaliency,
    #[error("no samples to evaluate")]
    Empty,
    #[error("invalid attribute query: {0}")]
    Attribute(String),
    #[error("invalid benchmark geometry: {0}")]
    Geometry(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Value written into deleted pixels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    #[default]
    Zero,
    /// Per-channel values, typically the dataset mean.
    Mean(Vec<f32>),
}

impl Fill {
    fn values(&self, channels: usize) -> Result<Vec<f32>, ShapeError> {
        match self {
            Fill::Zero => Ok(vec![0.0; channels]),
            Fill::Mean(v) if v.len() == channels => Ok(v.clone()),
            Fill::Mean(v) => Err(ShapeError::new(&[channels], &[v.len()])),
        }
    }
}

/// Pixel indices in deletion order: descending saliency, ties by
/// ascending row-major index.
pub fn deletion_order(saliency: &Grid) -> Vec<usize> {
    let s = saliency.as_slice();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx
}

/// `ceil(fraction * n)`, with a small slack so that products such as
/// `0.07 * 100` are not pushed up by rounding error.
pub fn masked_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn check_fraction(f: f64) -> Result<(), EvalError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(EvalError::Fraction(f));
    }
    Ok(())
}

fn check_resolution(image: &Image, saliency: &Grid) -> Result<(), ShapeError> {
    if saliency.dims() != (image.height(), image.width()) {
        return Err(ShapeError::new(
            &[image.height(), image.width()],
            &[saliency.height(), saliency.width()],
        ));
    }
    Ok(())
}

fn fill_pixels(image: &Image, order: &[usize], fill: &[f32]) -> Image {
    let mut out = image.clone();
    let c = image.channels();
    let data = out.as_mut_slice();
    for &p in order {
        data[p * c..(p + 1) * c].copy_from_slice(fill);
    }
    out
}

/// Replaces the `ceil(fraction * H * W)` most salient pixels with `fill`.
pub fn mask_top_pixels(image: &Image, saliency: &Grid, fraction: f64, fill: &Fill) -> Result<Image, EvalError> {
    check_resolution(image, saliency)?;
    check_fraction(fraction)?;
    let order = deletion_order(saliency);
    let n = masked_count(fraction, order.len());
    Ok(fill_pixels(image, &order[..n], &fill.values(image.channels())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub fractions: Vec<f64>,
    pub confidence_target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_reference: Option<Vec<f64>>,
}

impl DeletionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,p_target,p_reference\n");
        for (i, f) in self.fractions.iter().enumerate() {
            let pd = self
                .confidence_reference
                .as_ref()
                .map(|r| r[i].to_string())
                .unwrap_or_default();
            out.push_str(&format!("{f},{},{pd}\n", self.confidence_target[i]));
        }
        out
    }
}

/// `0, step, 2 step, ...` up to 1, always ending exactly at 1.
pub fn deletion_fractions(step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(EvalError::Step(step));
    }
    let mut out = vec![0.0];
    let mut i = 1u32;
    loop {
        let f = i as f64 * step;
        if f >= 1.0 - 1e-9 {
            out.push(1.0);
            return Ok(out);
        }
        out.push(f);
        i += 1;
    }
}

fn confidences(backend: &dyn ModelBackend, image: &Image) -> Result<Vec<f64>, EvalError> {
    Ok(softmax(&backend.logits(image)?).into_iter().map(f64::from).collect())
}

fn check_class(backend: &dyn ModelBackend, class: usize) -> Result<(), EvalError> {
    let n = backend.descriptor().num_classes;
    if class >= n {
        return Err(BackendError::ClassOutOfRange { class, num_classes: n }.into());
    }
    Ok(())
}

/// Confidence of `target` (and `reference`) as growing fractions of the
/// most salient pixels are deleted. The first point is the unmasked image.
pub fn deletion_curve(
    backend: &dyn ModelBackend,
    image: &Image,
    saliency: &Grid,
    step: f64,
    fill: &Fill,
    target: usize,
    reference: Option<usize>,
) -> Result<DeletionCurve, EvalError> {
    check_resolution(image, saliency)?;
    check_class(backend, target)?;
    if let Some(d) = reference {
        check_class(backend, d)?;
    }
    let fractions = deletion_fractions(step)?;
    let fill = fill.values(image.channels())?;
    let order = deletion_order(saliency);
    let mut pc = Vec::with_capacity(fractions.len());
    let mut pd = Vec::with_capacity(fractions.len());
    for &f in &fractions {
        let n = masked_count(f, order.len());
        let probs = if n == 0 {
            confidences(backend, image)?
        } else {
            confidences(backend, &fill_pixels(image, &order[..n], &fill))?
        };
        pc.push(probs[target]);
        if let Some(d) = reference {
            pd.push(probs[d]);
        }
    }
    Ok(DeletionCurve {
        fractions,
        confidence_target: pc,
        confidence_reference: reference.map(|_| pd),
    })
}

/// Trapezoidal area under the target curve divided by the fraction span.
pub fn auc(curve: &DeletionCurve) -> Result<f64, EvalError> {
    let (f, p) = (&curve.fractions, &curve.confidence_target);
    if f.len() < 2 || p.len() != f.len() {
        return Err(EvalError::ShortCurve);
    }
    let area: f64 = (1..f.len()).map(|i| (f[i] - f[i - 1]) * (p[i] + p[i - 1]) / 2.0).sum();
    Ok(area / (f[f.len() - 1] - f[0]))
}

/// `(p^c - p*^c) - (p^d - p*^d)`
pub fn relative_drop_from_confidences(pc: f64, pc_masked: f64, pd: f64, pd_masked: f64) -> f64 {
    (pc - pc_masked) - (pd - pd_masked)
}

/// Relative confidence drop of `target` against `reference` after
/// deleting the top `fraction` of salient pixels.
pub fn relative_drop(
    backend: &dyn ModelBackend,
    image: &Image,
    saliency: &Grid,
    target: usize,
    reference: usize,
    fraction: f64,
    fill: &Fill,
) -> Result<f64, EvalError> {
    if target == reference {
        return Err(EvalError::SameClass(target));
    }
    check_class(backend, target)?;
    check_class(backend, reference)?;
    let before = confidences(backend, image)?;
    let masked = mask_top_pixels(image, saliency, fraction, fill)?;
    let after = if masked_count(fraction, saliency.len()) == 0 {
        before.clone()
    } else {
        confidences(backend, &masked)?
    };
    Ok(relative_drop_from_confidences(
        before[target],
        after[target],
        before[reference],
        after[reference],
    ))
}

/// Share of saliency energy inside `bbox`; 0 for an all-zero map.
pub fn pointing_game(saliency: &Grid, bbox: &BBox) -> Result<f64, EvalError> {
    let (h, w) = saliency.dims();
    if !bbox.is_valid_for(w, h) {
        return Err(EvalError::BBox(*bbox, h, w));
    }
    if saliency.as_slice().iter().any(|&v| v < 0.0) {
        return Err(EvalError::NegativeSaliency);
    }
    let total = saliency.sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut inside = 0f64;
    for y in bbox.y0 as usize..bbox.y1 as usize {
        for x in bbox.x0 as usize..bbox.x1 as usize {
            inside += saliency.get(y, x) as f64;
        }
    }
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Cosine similarity of two flattened maps; 0 if either is all zeros.
pub fn saliency_overlap(a: &Grid, b: &Grid) -> Result<f64, EvalError> {
    a.same_shape(b)?;
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
