//! Built-in convolutional toy network with exact analytic gradients.
//!
//! Each stage is a same-padded stride-1 convolution, a smooth elementwise
//! nonlinearity, and a non-overlapping `pool x pool` average pool; the
//! output of stage `s` is exposed as layer `block{s+1}`. The last layer is
//! globally average pooled and fed to a linear head, so gradients at the
//! final layer are `(sum_i c_i w^i_k) / Z` everywhere.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, BackendKind, ForwardOutput, LogitCombination, ModelBackend};
use crate::features::FeatureStack;
use crate::grid::{Image, ShapeError};
use crate::head::{ClassifierHead, HeadOrigin};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// Odd, so an all-zero input stays zero through bias-free stages.
    Tanh,
    /// `ln(1 + e^x)`.
    Softplus,
}

impl Nonlinearity {
    fn apply<T: Float>(self, x: T) -> T {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Softplus => {
                // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
                x.max(T::zero()) + (-x.abs()).exp().ln_1p()
            }
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f32) -> f32 {
        match self {
            Nonlinearity::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Nonlinearity::Softplus => 1.0 / (1.0 + (-pre).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel side length.
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub pool: usize,
}

/// Shape parameters for a randomly initialized stage.
#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl ConvStage {
    fn validate(&self) -> Result<(), String> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(format!("kernel {} must be odd", self.kernel));
        }
        if self.pool == 0 {
            return Err("pool must be >= 1".into());
        }
        if self.weights.len() != self.out_channels * self.in_channels * self.kernel * self.kernel {
            return Err("weight count does not match stage shape".into());
        }
        if self.bias.len() != self.out_channels {
            return Err("bias count does not match out_channels".into());
        }
        Ok(())
    }

    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Same-padded convolution on a CHW buffer.
    fn conv<T: Float>(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        let r = (self.kernel / 2) as isize;
        let mut out = vec![T::zero(); self.out_channels * h * w];
        for o in 0..self.out_channels {
            let b = T::from(self.bias[o]).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let mut acc = b;
                    for i in 0..self.in_channels {
                        let plane = &input[i * h * w..(i + 1) * h * w];
                        for ky in 0..self.kernel {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let sx = x as isize + kx as isize - r;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let wt = T::from(self.weight(o, i, ky, kx)).unwrap();
                                acc = acc + wt * plane[sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    /// Transposed convolution: gradient with respect to the input.
    fn conv_input_grad(&self, grad_pre: &[f32], h: usize, w: usize) -> Vec<f32> {
        let r = (self.kernel / 2) as isize;
        let mut grad_in = vec![0f32; self.in_channels * h * w];
        for o in 0..self.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let g = grad_pre[(o * h + y) * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.in_channels {
                        for ky in 0..self.kernel {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let sx = x as isize + kx as isize - r;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                grad_in[(i * h + sy as usize) * w + sx as usize] +=
                                    self.weight(o, i, ky, kx) * g;
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

fn avg_pool<T: Float>(input: &[T], channels: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (oh, ow) = (h / p, w / p);
    let inv = T::from(1.0 / (p * p) as f64).unwrap();
    let mut out = vec![T::zero(); channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = T::zero();
                for dy in 0..p {
                    for dx in 0..p {
                        acc = acc + input[(c * h + y * p + dy) * w + x * p + dx];
                    }
                }
                out[(c * oh + y) * ow + x] = acc * inv;
            }
        }
    }
    out
}

/// The convolutional feature extractor (no head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyNetwork {
    /// `[H_img, W_img, channels]`
    pub input_shape: [usize; 3],
    pub nonlinearity: Nonlinearity,
    pub stages: Vec<ConvStage>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ToyNetwork {
    /// Weights drawn `N(0, 1) * gain / sqrt(fan_in)` from a SplitMix64
    /// stream, biases zero.
    pub fn random(seed: u64, input_shape: [usize; 3], stages: &[StageSpec], gain: f64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut in_ch = input_shape[2];
        let mut built = Vec::with_capacity(stages.len());
        for s in stages {
            let fan_in = (in_ch * s.kernel * s.kernel) as f64;
            let n = s.out_channels * in_ch * s.kernel * s.kernel;
            let weights = (0..n)
                .map(|_| (rng.normal() * gain / fan_in.sqrt()) as f32)
                .collect();
            built.push(ConvStage {
                in_channels: in_ch,
                out_channels: s.out_channels,
                kernel: s.kernel,
                weights,
                bias: vec![0.0; s.out_channels],
                pool: s.pool,
            });
            in_ch = s.out_channels;
        }
        Self {
            input_shape,
            nonlinearity: Nonlinearity::Tanh,
            stages: built,
            seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stages.is_empty() {
            return Err("network needs at least one stage".into());
        }
        let [mut h, mut w, mut c] = self.input_shape;
        for (idx, s) in self.stages.iter().enumerate() {
            s.validate().map_err(|e| format!("stage {idx}: {e}"))?;
            if s.in_channels != c {
                return Err(format!("stage {idx}: expects {} channels, gets {c}", s.in_channels));
            }
            if h % s.pool != 0 || w % s.pool != 0 {
                return Err(format!("stage {idx}: {h}x{w} not divisible by pool {}", s.pool));
            }
            h /= s.pool;
            w /= s.pool;
            c = s.out_channels;
        }
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<String> {
        (1..=self.stages.len()).map(|i| format!("block{i}")).collect()
    }

    /// `[K, H, W]` after every stage.
    pub fn layer_shapes(&self) -> Vec<[usize; 3]> {
        let [mut h, mut w, _] = self.input_shape;
        self.stages
            .iter()
            .map(|s| {
                h /= s.pool;
                w /= s.pool;
                [s.out_channels, h, w]
            })
            .collect()
    }

    fn spatial_in(&self, stage: usize) -> (usize, usize) {
        let [mut h, mut w, _] = self.input_shape;
        for s in &self.stages[..stage] {
            h /= s.pool;
            w /= s.pool;
        }
        (h, w)
    }

    fn image_to_chw<T: Float>(&self, image: &Image) -> Vec<T> {
        let [h, w, c] = self.input_shape;
        let src = image.as_slice();
        let mut out = vec![T::zero(); c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = T::from(src[(y * w + x) * c + ch]).unwrap();
                }
            }
        }
        out
    }

    /// Runs stages `from..` on a CHW buffer, keeping every stage output.
    fn run<T: Float>(&self, input: Vec<T>, from: usize) -> Vec<Vec<T>> {
        let mut outs = Vec::with_capacity(self.stages.len() - from);
        let mut cur = input;
        for (idx, s) in self.stages.iter().enumerate().skip(from) {
            let (h, w) = self.spatial_in(idx);
            let act: Vec<T> = s.conv(&cur, h, w).into_iter().map(|v| self.nonlinearity.apply(v)).collect();
            cur = avg_pool(&act, s.out_channels, h, w, s.pool);
            outs.push(cur.clone());
        }
        outs
    }
}

/// A [`ToyNetwork`] with a linear head on the globally pooled final layer.
#[derive(Debug, Clone)]
pub struct ToyCnn {
    network: ToyNetwork,
    head: ClassifierHead,
    descriptor: BackendDescriptor,
}

impl ToyCnn {
    pub fn new(network: ToyNetwork, head: ClassifierHead) -> Result<Self, BackendError> {
        network.validate().map_err(BackendError::Protocol)?;
        let shapes = network.layer_shapes();
        let k = shapes.last().expect("validated")[0];
        if head.dim() != k {
            return Err(ShapeError::new(&[k], &[head.dim()]).into());
        }
        let descriptor = BackendDescriptor {
            kind: BackendKind::BuiltinToy,
            layer_names: network.layer_names(),
            input_shape: network.input_shape,
            feature_shapes: shapes,
            num_classes: head.num_classes(),
            seed: network.seed,
        };
        Ok(Self {
            network,
            head,
            descriptor,
        })
    }

    /// Random network plus a bias-free random head, all from one seed.
    pub fn random(seed: u64, input_shape: [usize; 3], stages: &[StageSpec], num_classes: usize) -> Self {
        let network = ToyNetwork::random(seed, input_shape, stages, 1.5);
        let k = stages.last().expect("at least one stage").out_channels;
        let mut rng = SplitMix64::new(seed ^ 0x68EA_D000);
        let weights = (0..num_classes * k).map(|_| rng.normal() as f32).collect();
        let names = (0..num_classes).map(|c| format!("class_{c}")).collect();
        let head = ClassifierHead::new(num_classes, k, weights, None, names, HeadOrigin::Trained)
            .expect("random head is valid");
        Self::new(network, head).expect("random network is valid")
    }

    pub fn network(&self) -> &ToyNetwork {
        &self.network
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn with_head(&self, head: ClassifierHead) -> Result<Self, BackendError> {
        Self::new(self.network.clone(), head)
    }

    fn head_logits<T: Float>(&self, final_out: &[T]) -> Vec<T> {
        let k = self.head.dim();
        let z = final_out.len() / k;
        let inv = T::from(1.0 / z as f64).unwrap();
        let pooled: Vec<T> = (0..k)
            .map(|c| final_out[c * z..(c + 1) * z].iter().fold(T::zero(), |a, &b| a + b) * inv)
            .collect();
        (0..self.head.num_classes())
            .map(|c| {
                let dot = self
                    .head
                    .row(c)
                    .iter()
                    .zip(&pooled)
                    .fold(T::zero(), |a, (&w, &p)| a + T::from(w).unwrap() * p);
                dot + T::from(self.head.bias().map_or(0.0, |b| b[c])).unwrap()
            })
            .collect()
    }

    /// Logits computed from a CHW feature buffer at `layer` onward, in
    /// precision `T`.
    pub fn logits_from_layer<T: Float>(&self, layer: &str, features: &[T]) -> Result<Vec<T>, BackendError> {
        let idx = self.descriptor.layer_index(layer)?;
        let [k, h, w] = self.descriptor.feature_shapes[idx];
        if features.len() != k * h * w {
            return Err(ShapeError::new(&[k, h, w], &[features.len()]).into());
        }
        let tail = self.network.run(features.to_vec(), idx + 1);
        Ok(match tail.last() {
            Some(out) => self.head_logits(out),
            None => self.head_logits(features),
        })
    }

    /// Full forward pass in precision `T`.
    pub fn logits_generic<T: Float>(&self, image: &Image) -> Result<Vec<T>, BackendError> {
        self.descriptor.check_image(image)?;
        let outs = self.network.run(self.network.image_to_chw::<T>(image), 0);
        Ok(self.head_logits(outs.last().expect("validated")))
    }
}

impl ModelBackend for ToyCnn {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError> {
        self.descriptor.check_image(image)?;
        let idx = self.descriptor.layer_index(layer)?;
        let outs = self.network.run(self.network.image_to_chw::<f32>(image), 0);
        let logits = self.head_logits(outs.last().expect("validated"));
        let [k, h, w] = self.descriptor.feature_shapes[idx];
        let features = FeatureStack::new(k, h, w, outs[idx].clone())?;
        Ok(ForwardOutput { features, logits })
    }

    fn grad_features(
        &self,
        image: &Image,
        layer: &str,
        target: &LogitCombination,
    ) -> Result<FeatureStack, BackendError> {
        self.descriptor.check_image(image)?;
        target.check(self.head.num_classes())?;
        let idx = self.descriptor.layer_index(layer)?;
        let last = self.network.stages.len() - 1;

        // d target / d final layer: combined head row over Z, uniform.
        let [k, hf, wf] = self.descriptor.feature_shapes[last];
        let z = (hf * wf) as f32;
        let combined = target.combine_rows(|c| self.head.row(c).to_vec(), k);
        let mut grad: Vec<f32> = combined
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / z, hf * wf))
            .collect();

        if idx < last {
            // Recompute the pre-activations of stages idx+1..=last.
            let input = self.network.run(self.network.image_to_chw::<f32>(image), 0);
            for s in (idx + 1..=last).rev() {
                let stage = &self.network.stages[s];
                let (h, w) = self.network.spatial_in(s);
                let pre = stage.conv(&input[s - 1], h, w);
                let (oh, ow) = (h / stage.pool, w / stage.pool);
                let inv = 1.0 / (stage.pool * stage.pool) as f32;
                let mut grad_pre = vec![0f32; stage.out_channels * h * w];
                for o in 0..stage.out_channels {
                    for y in 0..h {
                        for x in 0..w {
                            let g = grad[(o * oh + y / stage.pool) * ow + x / stage.pool] * inv;
                            let at = (o * h + y) * w + x;
                            grad_pre[at] = g * self.network.nonlinearity.derivative(pre[at]);
                        }
                    }
                }
                grad = stage.conv_input_grad(&grad_pre, h, w);
            }
        }
        let [k, h, w] = self.descriptor.feature_shapes[idx];
        Ok(FeatureStack::new(k, h, w, grad)?)
    }

    fn supports_gradients(&self) -> bool {
        true
    }
}
