//! Synthetic fine-grained benchmark.
//!
//! Each image shows one object on a dark noisy background: a square body
//! (blue or red) with a smaller head patch on top (green, yellow, cyan or
//! magenta). The eight classes are the body x head combinations, so a
//! class shares its body with three classes and its head with one.
//! Small blobs in body colors and white are scattered outside the object.
//!
//! The backbone is a fixed one-stage toy network: 1x1 color detectors for
//! the eight RGB cube corners, softplus, then 4x4 average pooling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalSample};
use crate::backend::{ConvStage, ModelBackend, Nonlinearity, ToyCnn, ToyNetwork};
use crate::features::FeatureStack;
use crate::grid::{Grid, Image};
use crate::head::{train_head, ClassifierHead, EmbeddingSet, HeadOrigin, TrainConfig};
use crate::rng::SplitMix64;
use crate::tensor_store::{
    save_manifest, write_tensor, BBox, DatasetManifest, SampleRecord, Split, MANIFEST_VERSION,
};

const BODY_COLORS: [(&str, [f32; 3]); 2] = [("blue", [0.05, 0.1, 0.95]), ("red", [0.95, 0.1, 0.05])];
const HEAD_COLORS: [(&str, [f32; 3]); 4] = [
    ("green", [0.1, 0.9, 0.1]),
    ("yellow", [0.9, 0.9, 0.1]),
    ("cyan", [0.1, 0.9, 0.9]),
    ("magenta", [0.9, 0.1, 0.9]),
];
const CLUTTER_COLORS: [[f32; 3]; 3] = [[0.05, 0.1, 0.95], [0.95, 0.1, 0.05], [0.95, 0.95, 0.95]];
const BACKGROUND: f32 = 0.15;
const DETECTOR_GAIN: f32 = 10.0;
const POOL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_train: usize,
    pub num_test: usize,
    /// Square image side; a multiple of 4.
    pub image_size: usize,
    pub body_size: usize,
    pub head_size: usize,
    pub clutter_blobs: usize,
    pub clutter_size: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_train: 400,
            num_test: 200,
            image_size: 32,
            body_size: 12,
            head_size: 6,
            clutter_blobs: 2,
            clutter_size: 4,
            noise: 0.03,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), EvalError> {
        let geo = |m: &str| Err(EvalError::Geometry(m.into()));
        if self.image_size == 0 || !self.image_size.is_multiple_of(POOL) {
            return geo("image size must be a positive multiple of 4");
        }
        if self.body_size == 0 || self.head_size == 0 || self.head_size > self.body_size {
            return geo("need 0 < head size <= body size");
        }
        if self.body_size + self.head_size + 2 > self.image_size {
            return geo("object does not fit the image");
        }
        if self.clutter_blobs > 0 && (self.clutter_size == 0 || self.clutter_size > self.image_size / 4) {
            return geo("clutter blobs must be between 1 and a quarter image wide");
        }
        if self.num_train + self.num_test == 0 {
            return geo("no images requested");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return geo("noise must be finite and non-negative");
        }
        Ok(())
    }
}

/// Ground-truth regions of one sample, in image pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleTruth {
    pub sample_id: String,
    pub body_color: usize,
    pub head_color: usize,
    pub body: BBox,
    pub head: BBox,
    /// Union of body and head.
    pub object: BBox,
}

fn class_parts(class: usize) -> (usize, usize) {
    (class / HEAD_COLORS.len(), class % HEAD_COLORS.len())
}

fn box_mask(mask: &mut Grid, b: &BBox) {
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            mask.set(y as usize, x as usize, 1.0);
        }
    }
}

/// Pixels that tell class `c` apart from class `d` on this sample: the
/// body if their bodies differ, the head if their heads differ.
pub fn class_pair_mask(truth: &SampleTruth, c: usize, d: usize, height: usize, width: usize) -> Grid {
    let (bc, hc) = class_parts(c);
    let (bd, hd) = class_parts(d);
    let mut mask = Grid::zeros(height, width);
    if bc != bd {
        box_mask(&mut mask, &truth.body);
    }
    if hc != hd {
        box_mask(&mut mask, &truth.head);
    }
    mask
}

impl SampleTruth {
    /// Object pixels shared by classes `c` and `d`.
    pub fn shared_mask(&self, c: usize, d: usize, height: usize, width: usize) -> Grid {
        let disc = class_pair_mask(self, c, d, height, width);
        let mut obj = Grid::zeros(height, width);
        box_mask(&mut obj, &self.body);
        box_mask(&mut obj, &self.head);
        Grid::new(
            height,
            width,
            obj.as_slice().iter().zip(disc.as_slice()).map(|(&o, &m)| o * (1.0 - m)).collect(),
        )
        .expect("same shape")
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub record: SampleRecord,
    pub image: Image,
    pub features: FeatureStack,
    pub truth: SampleTruth,
}

impl SynthSample {
    pub fn eval_sample(&self) -> EvalSample<'_> {
        EvalSample {
            sample_id: &self.record.sample_id,
            image: &self.image,
            features: &self.features,
            label: self.record.class_id,
            bbox: self.record.bbox,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub spec: SynthSpec,
    pub classes: Vec<String>,
    pub network: ToyNetwork,
    pub samples: Vec<SynthSample>,
}

/// Color detectors for the RGB cube corners in the order black, red,
/// green, yellow, blue, magenta, cyan, white (bit 0 = red).
fn detector_network(image_size: usize) -> ToyNetwork {
    let mut weights = Vec::with_capacity(24);
    let mut bias = Vec::with_capacity(8);
    for corner in 0..8u32 {
        let v = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        for &bit in &v {
            weights.push(DETECTOR_GAIN * (2.0 * bit as f32 - 1.0));
        }
        let ones = v.iter().sum::<u32>() as f32;
        bias.push(-DETECTOR_GAIN * (ones - 0.5));
    }
    ToyNetwork {
        input_shape: [image_size, image_size, 3],
        nonlinearity: Nonlinearity::Softplus,
        stages: vec![ConvStage {
            in_channels: 3,
            out_channels: 8,
            kernel: 1,
            weights,
            bias,
            pool: POOL,
        }],
        seed: None,
    }
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1
}

fn paint(data: &mut [f32], size: usize, b: &BBox, color: [f32; 3]) {
    for y in b.y0 as usize..b.y1 as usize {
        for x in b.x0 as usize..b.x1 as usize {
            data[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&color);
        }
    }
}

fn square(x: usize, y: usize, w: usize, h: usize) -> BBox {
    BBox {
        x0: x as u32,
        y0: y as u32,
        x1: (x + w) as u32,
        y1: (y + h) as u32,
    }
}

impl SynthBenchmark {
    pub fn generate(spec: &SynthSpec) -> Result<Self, EvalError> {
        spec.validate()?;
        let classes: Vec<String> = BODY_COLORS
            .iter()
            .flat_map(|(b, _)| HEAD_COLORS.iter().map(move |(h, _)| format!("{b}_body_{h}_head")))
            .collect();
        let network = detector_network(spec.image_size);
        let blank = ClassifierHead::new(
            classes.len(),
            8,
            vec![0.0; classes.len() * 8],
            None,
            classes.clone(),
            HeadOrigin::Trained,
        )?;
        let probe = ToyCnn::new(network.clone(), blank)?;
        let mut rng = SplitMix64::new(spec.seed);
        let n = spec.num_train + spec.num_test;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let (split, id) = if i < spec.num_train {
                (Split::Train, format!("train_{i:04}"))
            } else {
                (Split::Test, format!("test_{:04}", i - spec.num_train))
            };
            let class = i % classes.len();
            let (image, truth) = Self::draw(spec, &mut rng, class, id.clone());
            // Store-and-reload through u8 so features match the saved image.
            let image = Image::from_tensor(&image.to_u8_tensor())?;
            let features = probe.forward(&image, "block1")?.features;
            samples.push(SynthSample {
                record: SampleRecord {
                    sample_id: id.clone(),
                    class_id: class,
                    feature_path: PathBuf::from(format!("features/{id}.fct")),
                    image_path: PathBuf::from(format!("images/{id}.fct")),
                    bbox: Some(truth.object),
                    split,
                },
                image,
                features,
                truth,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            classes,
            network,
            samples,
        })
    }

    fn draw(spec: &SynthSpec, rng: &mut SplitMix64, class: usize, sample_id: String) -> (Image, SampleTruth) {
        let s = spec.image_size;
        let (body_color, head_color) = class_parts(class);
        let mut data = vec![BACKGROUND; s * s * 3];
        let (bs, hs) = (spec.body_size, spec.head_size);
        let bx = 1 + rng.below(s - bs - 1);
        let by = hs + 1 + rng.below(s - bs - hs - 1);
        let body = square(bx, by, bs, bs);
        let hx = bx + (bs - hs) / 2;
        let head = square(hx, by - hs, hs, hs);
        let object = square(bx, by - hs, bs, bs + hs);
        paint(&mut data, s, &body, BODY_COLORS[body_color].1);
        paint(&mut data, s, &head, HEAD_COLORS[head_color].1);
        let cs = spec.clutter_size;
        let mut placed: Vec<BBox> = vec![object];
        for _ in 0..spec.clutter_blobs {
            let color = CLUTTER_COLORS[rng.below(CLUTTER_COLORS.len())];
            for _ in 0..64 {
                let b = square(rng.below(s - cs + 1), rng.below(s - cs + 1), cs, cs);
                if placed.iter().all(|p| !overlaps(p, &b)) {
                    paint(&mut data, s, &b, color);
                    placed.push(b);
                    break;
                }
            }
        }
        for v in data.iter_mut() {
            *v = (*v + spec.noise * rng.normal() as f32).clamp(0.0, 1.0);
        }
        let image = Image::new(s, s, 3, data).expect("sized");
        (
            image,
            SampleTruth {
                sample_id,
                body_color,
                head_color,
                body,
                head,
                object,
            },
        )
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SynthSample> {
        self.samples.iter().filter(move |s| s.record.split == split)
    }

    pub fn embeddings(&self, split: Split) -> Result<EmbeddingSet, EvalError> {
        let picked: Vec<&SynthSample> = self.samples_in(split).collect();
        let data = picked.iter().flat_map(|s| s.features.pooled().iter().copied()).collect();
        let labels = picked.iter().map(|s| s.record.class_id).collect();
        Ok(EmbeddingSet::new(data, 8, labels, split)?)
    }

    /// The training recipe with mini-batches small enough for a few
    /// hundred images to get many optimizer steps per epoch.
    pub fn train_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    pub fn train_head(&self, config: &TrainConfig) -> Result<ClassifierHead, EvalError> {
        Ok(train_head(&self.embeddings(Split::Train)?, self.classes.clone(), config)?)
    }

    pub fn backend(&self, head: ClassifierHead) -> Result<ToyCnn, EvalError> {
        Ok(ToyCnn::new(self.network.clone(), head)?)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let s = self.spec.image_size;
        DatasetManifest {
            version: MANIFEST_VERSION,
            classes: self.classes.clone(),
            samples: self.samples.iter().map(|s| s.record.clone()).collect(),
            layer_name: "block1".into(),
            feature_shape: [8, s / POOL, s / POOL],
            image_shape: [s, s, 3],
        }
    }

    /// Writes `manifest.json`, the tensors it references, `truth.json` and
    /// the backbone as `network.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        for sub in ["features", "images"] {
            fs::create_dir_all(dir.join(sub)).map_err(io(&dir.join(sub)))?;
        }
        for s in &self.samples {
            write_tensor(dir.join(&s.record.feature_path), &s.features.to_tensor())?;
            write_tensor(dir.join(&s.record.image_path), &s.image.to_u8_tensor())?;
        }
        save_manifest(dir.join("manifest.json"), &self.manifest())?;
        let truth: Vec<&SampleTruth> = self.samples.iter().map(|s| &s.truth).collect();
        let truth = serde_json::to_string_pretty(&truth).expect("serializable");
        fs::write(dir.join("truth.json"), truth).map_err(io(&dir.join("truth.json")))?;
        let network = serde_json::to_string_pretty(&self.network).expect("serializable");
        fs::write(dir.join("network.json"), network).map_err(io(&dir.join("network.json")))?;
        Ok(())
    }
}
