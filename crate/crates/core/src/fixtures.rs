//! Small deterministic inputs shared by tests, benches and the CLI demos.

use crate::backend::{StageSpec, ToyCnn};
use crate::grid::Image;
use crate::head::EmbeddingSet;
use crate::rng::SplitMix64;
use crate::tensor_store::Split;

/// Two 2-D Gaussian blobs centered at (-3, -3) and (3, 3), sigma 0.5,
/// with labels alternating 0, 1.
pub fn separable_blobs(n_per_class: usize, seed: u64) -> EmbeddingSet {
    let mut rng = SplitMix64::new(seed);
    let mut emb = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let class = i % 2;
        let center = if class == 0 { -3.0 } else { 3.0 };
        emb.push((center + 0.5 * rng.normal()) as f32);
        emb.push((center + 0.5 * rng.normal()) as f32);
        labels.push(class);
    }
    EmbeddingSet::new(emb, 2, labels, Split::Train).expect("well-formed")
}

/// Uniform `[0, 1)` pixels.
pub fn random_image(seed: u64, shape: [usize; 3]) -> Image {
    let mut rng = SplitMix64::new(seed);
    let [h, w, c] = shape;
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.next_f64() as f32).collect()).expect("sized")
}

pub const TOY_INPUT: [usize; 3] = [12, 12, 3];
pub const TOY_CLASSES: usize = 6;

/// Three-stage random toy network on 12x12 RGB input with six classes:
/// `block1` is `[6, 6, 6]`, `block2` `[8, 6, 6]`, `block3` `[8, 3, 3]`.
pub fn toy_cnn(seed: u64) -> ToyCnn {
    ToyCnn::random(
        seed,
        TOY_INPUT,
        &[
            StageSpec { out_channels: 6, kernel: 3, pool: 2 },
            StageSpec { out_channels: 8, kernel: 3, pool: 1 },
            StageSpec { out_channels: 8, kernel: 3, pool: 2 },
        ],
        TOY_CLASSES,
    )
}
