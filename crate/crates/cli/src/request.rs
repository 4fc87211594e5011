//! Explanation requests shared by `finercam explain` and `POST /api/explain`.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use finercam_core::cam::{
    explain, normalize, Activation, Aggregation, ExplanationTarget, Method, ModelContext, SaliencyMap,
    DEFAULT_GAMMA, MAX_GAMMA,
};
use finercam_core::eval::{relative_drop, Fill};
use finercam_core::grid::Grid;
use finercam_core::head::{argmax, rank_by_weight_similarity, rank_reference_classes};

use crate::error::{AppError, AppResult, ErrorKind};
use crate::overlay::{encode_png, overlay_rgb, DEFAULT_OPACITY};
use crate::workspace::{LoadedSample, Workspace};

/// `"auto:T"` or an explicit class list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum References {
    Auto(usize),
    Explicit(Vec<usize>),
}

impl Default for References {
    fn default() -> Self {
        References::Auto(finercam_core::cam::DEFAULT_REFERENCE_COUNT)
    }
}

impl std::str::FromStr for References {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(t) = s.strip_prefix("auto:") {
            return t
                .parse()
                .map(References::Auto)
                .map_err(|_| format!("bad reference count in {s:?}"));
        }
        if s == "none" || s.is_empty() {
            return Ok(References::Explicit(Vec::new()));
        }
        s.split(',')
            .map(|c| c.trim().parse().map_err(|_| format!("bad reference class {c:?}")))
            .collect::<Result<_, _>>()
            .map(References::Explicit)
    }
}

impl Serialize for References {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            References::Auto(t) => s.serialize_str(&format!("auto:{t}")),
            References::Explicit(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for References {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
            Raw::List(v) => Ok(References::Explicit(v)),
        }
    }
}

/// What the `saliency` tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Activated map at feature resolution.
    Raw,
    /// Max-normalized map at image resolution.
    #[default]
    Normalized,
    /// As `normalized`; the overlay is the primary product.
    OverlayPng,
}

fn default_gamma() -> f32 {
    DEFAULT_GAMMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub sample_id: String,
    #[serde(default)]
    pub target_class: Option<usize>,
    #[serde(default)]
    pub references: References,
    #[serde(default = "default_gamma")]
    pub gamma: f32,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output: OutputKind,
    /// Rank `auto` references by head-row similarity instead of logits.
    #[serde(default)]
    pub by_weight_similarity: bool,
}

impl ExplainRequest {
    pub fn new(sample_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            target_class: None,
            references: References::default(),
            gamma: DEFAULT_GAMMA,
            method: Method::Grad,
            aggregation: Aggregation::AvgBeforeAct,
            activation: Activation::Relu,
            output: OutputKind::Normalized,
            by_weight_similarity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub target_class: usize,
    pub references_used: Vec<usize>,
    /// Head logits of the stored pooled features.
    pub logits: Vec<f32>,
    pub saliency: Grid,
    pub overlay_png: Vec<u8>,
}

/// Logits used for ranking: the head applied to the stored pooled features.
pub fn sample_logits(ws: &Workspace, sample: &LoadedSample<'_>) -> AppResult<Vec<f32>> {
    ws.head.logits(sample.features.pooled()).map_err(AppError::compute)
}

fn check_class(ws: &Workspace, class: usize, what: &str) -> AppResult<()> {
    let n = ws.head.num_classes();
    if class >= n {
        return Err(AppError::input(format!("{what} {class} out of range for {n} classes")));
    }
    Ok(())
}

pub fn resolve_references(ws: &Workspace, req: &ExplainRequest, logits: &[f32], target: usize) -> AppResult<Vec<usize>> {
    match &req.references {
        References::Explicit(v) => {
            for &d in v {
                check_class(ws, d, "reference class")?;
                if d == target {
                    return Err(AppError::input(format!("reference class {d} equals the target")));
                }
            }
            Ok(v.clone())
        }
        References::Auto(t) => {
            let ranked = if req.by_weight_similarity {
                rank_by_weight_similarity(&ws.head, target, *t)
            } else {
                rank_reference_classes(logits, target, *t)
            };
            ranked.map_err(AppError::input)
        }
    }
}

pub fn run_explain(ws: &Workspace, req: &ExplainRequest) -> AppResult<Explanation> {
    if !(0.0..=MAX_GAMMA).contains(&req.gamma) {
        return Err(AppError::usage(format!("gamma {} outside [0, {MAX_GAMMA}]", req.gamma)));
    }
    let sample = ws.load_sample(&req.sample_id)?;
    let logits = sample_logits(ws, &sample)?;
    let target_class = match req.target_class {
        Some(c) => {
            check_class(ws, c, "target class")?;
            c
        }
        None => argmax(&logits),
    };
    let references_used = resolve_references(ws, req, &logits, target_class)?;
    let target = ExplanationTarget {
        activation: req.activation,
        aggregation: req.aggregation,
        ..ExplanationTarget::finer(target_class, &references_used, req.gamma, req.method)
    };
    let ctx = match &ws.backend {
        Some(b) => Some(ModelContext {
            backend: b.as_ref(),
            image: &sample.image,
            layer: Some(&ws.dataset.manifest.layer_name),
            baseline: None,
        }),
        None if req.method == Method::Score => {
            return Err(AppError::new(ErrorKind::Unavailable, "score method needs a model backend"))
        }
        None => None,
    };
    let map = explain(&sample.features, Some(&ws.head), &target, ctx.as_ref()).map_err(AppError::compute)?;
    let normalized = normalized_image_map(&map, sample.image.height(), sample.image.width())?;
    let rgb = overlay_rgb(&sample.image, &normalized, DEFAULT_OPACITY).map_err(AppError::compute)?;
    let overlay_png = encode_png(&rgb, sample.image.width(), sample.image.height()).map_err(AppError::compute)?;
    let saliency = match req.output {
        OutputKind::Raw => map.grid,
        OutputKind::Normalized | OutputKind::OverlayPng => normalized,
    };
    Ok(Explanation {
        target_class,
        references_used,
        logits,
        saliency,
        overlay_png,
    })
}

pub fn normalized_image_map(map: &SaliencyMap, height: usize, width: usize) -> AppResult<Grid> {
    Ok(normalize(&map.upsampled(height, width)).map_err(AppError::compute)?.grid)
}

fn default_fraction() -> f64 {
    0.05
}

/// The explanation fields flattened together with the drop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDropRequest {
    #[serde(flatten)]
    pub explain: ExplainRequest,
    /// Class whose confidence is compared; the runner-up when absent.
    #[serde(default)]
    pub reference_class: Option<usize>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDropResponse {
    pub sample_id: String,
    pub target_class: usize,
    pub reference_class: usize,
    pub fraction: f64,
    pub relative_drop: f64,
    pub references_used: Vec<usize>,
}

/// Relative confidence drop after masking the top `fraction` of the
/// normalized image-resolution saliency.
pub fn run_relative_drop(ws: &Workspace, req: &RelativeDropRequest) -> AppResult<RelativeDropResponse> {
    let backend = ws.backend("relative drop")?;
    let mut explain_req = req.explain.clone();
    explain_req.output = OutputKind::Normalized;
    let e = run_explain(ws, &explain_req)?;
    let sample = ws.load_sample(&req.explain.sample_id)?;
    let reference_class = match req.reference_class {
        Some(d) => {
            check_class(ws, d, "reference class")?;
            d
        }
        None => {
            let logits = backend.logits(&sample.image).map_err(AppError::compute)?;
            rank_reference_classes(&logits, e.target_class, 1).map_err(AppError::input)?[0]
        }
    };
    if reference_class == e.target_class {
        return Err(AppError::input("reference class equals the target"));
    }
    let rd = relative_drop(
        backend,
        &sample.image,
        &e.saliency,
        e.target_class,
        reference_class,
        req.fraction,
        &Fill::Zero,
    )
    .map_err(|err| match err {
        finercam_core::eval::EvalError::Fraction(_) => AppError::usage(err.to_string()),
        other => AppError::compute(other),
    })?;
    Ok(RelativeDropResponse {
        sample_id: req.explain.sample_id.clone(),
        target_class: e.target_class,
        reference_class,
        fraction: req.fraction,
        relative_drop: rd,
        references_used: e.references_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references_parse_and_round_trip() {
        assert_eq!("auto:3".parse::<References>().unwrap(), References::Auto(3));
        assert_eq!("4, 2".parse::<References>().unwrap(), References::Explicit(vec![4, 2]));
        assert!("auto:x".parse::<References>().is_err());
        for r in [References::Auto(2), References::Explicit(vec![1, 5])] {
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<References>(&json).unwrap(), r);
        }
        assert_eq!(serde_json::to_string(&References::Auto(1)).unwrap(), "\"auto:1\"");
    }

    #[test]
    fn request_defaults() {
        let r: ExplainRequest = serde_json::from_str(r#"{"sample_id": "a"}"#).unwrap();
        assert_eq!(r, ExplainRequest::new("a"));
        assert!(serde_json::from_str::<ExplainRequest>(r#"{"sample_id": "a", "gama": 1}"#).is_err());
    }

    #[test]
    fn drop_request_flattens() {
        let r: RelativeDropRequest =
            serde_json::from_str(r#"{"sample_id": "a", "gamma": 0, "reference_class": 2}"#).unwrap();
        assert_eq!(r.explain.gamma, 0.0);
        assert_eq!(r.reference_class, Some(2));
        assert_eq!(r.fraction, 0.05);
    }
}
