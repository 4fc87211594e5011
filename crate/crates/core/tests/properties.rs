use proptest::prelude::*;

use finercam_core::backend::{LinearPixelBackend, ModelBackend};
use finercam_core::cam::{
    activate, aggregate, compose_raw, explain, normalize, upsample_bilinear, Activation, Aggregation, ChannelWeights,
    ExplanationTarget, FeatureStack, Method, ModelContext,
};
use finercam_core::eval::{
    auc, deletion_curve, deletion_order, mask_top_pixels, masked_count, pointing_game, relative_drop_from_confidences,
    DeletionCurve, Fill,
};
use finercam_core::grid::{Grid, Image};
use finercam_core::head::{softmax, ClassifierHead, HeadOrigin};
use finercam_core::tensor_store::{BBox, TensorFile};

fn tensor_strategy() -> impl Strategy<Value = TensorFile> {
    prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop_oneof![
            prop::collection::vec(any::<f32>(), n).prop_map({
                let s = shape.clone();
                move |v| TensorFile::from_f32(s.clone(), v).unwrap()
            }),
            prop::collection::vec(any::<f64>(), n).prop_map({
                let s = shape.clone();
                move |v| TensorFile::from_f64(s.clone(), v).unwrap()
            }),
            prop::collection::vec(any::<u8>(), n).prop_map(move |v| TensorFile::from_u8(shape.clone(), v).unwrap()),
        ]
    })
}

fn grid_strategy(max: usize) -> impl Strategy<Value = Grid> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0f32..10.0, h * w).prop_map(move |v| Grid::new(h, w, v).unwrap())
    })
}

fn stack_strategy() -> impl Strategy<Value = FeatureStack> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(k, h, w)| {
        prop::collection::vec(0f32..3.0, k * h * w).prop_map(move |v| FeatureStack::new(k, h, w, v).unwrap())
    })
}

fn head_for(k: usize, c: usize, values: &[f32]) -> ClassifierHead {
    let names = (0..c).map(|i| format!("c{i}")).collect();
    ClassifierHead::new(c, k, values[..c * k].to_vec(), None, names, HeadOrigin::Trained).unwrap()
}

proptest! {
    #[test]
    fn fct_round_trip_is_byte_exact(t in tensor_strategy()) {
        let bytes = t.encode();
        let back = TensorFile::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.dtype(), t.dtype());
    }

    #[test]
    fn truncated_files_always_fail(t in tensor_strategy(), cut in 1usize..8) {
        let bytes = t.encode();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(TensorFile::decode(&bytes[..keep]).is_err());
    }

    #[test]
    fn masked_sets_are_nested(s in grid_strategy(6), f1 in 0f64..1.0, f2 in 0f64..1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let order = deletion_order(&s);
        let (a, b) = (masked_count(lo, s.len()), masked_count(hi, s.len()));
        prop_assert!(a <= b);
        let img = Image::new(s.height(), s.width(), 1, vec![1.0; s.len()]).unwrap();
        let m_lo = mask_top_pixels(&img, &s, lo, &Fill::Zero).unwrap();
        let m_hi = mask_top_pixels(&img, &s, hi, &Fill::Zero).unwrap();
        for p in 0..s.len() {
            if m_lo.as_slice()[p] == 0.0 {
                prop_assert_eq!(m_hi.as_slice()[p], 0.0);
            }
        }
        prop_assert_eq!(order.len(), s.len());
    }

    #[test]
    fn auc_is_bounded_by_the_curve(p in prop::collection::vec(0f64..=1.0, 2..30)) {
        let n = p.len();
        let fractions = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a = auc(&DeletionCurve { fractions, confidence_target: p, confidence_reference: None }).unwrap();
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
    }

    #[test]
    fn relative_drop_is_antisymmetric(a in 0f64..1.0, b in 0f64..1.0, c in 0f64..1.0, d in 0f64..1.0) {
        prop_assert_eq!(relative_drop_from_confidences(a, b, c, d), -relative_drop_from_confidences(c, d, a, b));
    }

    #[test]
    fn pointing_game_ignores_scale(s in grid_strategy(6), k in 0.01f32..100.0, x0 in 0u32..3, y0 in 0u32..3) {
        let (h, w) = s.dims();
        let b = BBox { x0: x0.min(w as u32 - 1), y0: y0.min(h as u32 - 1), x1: w as u32, y1: h as u32 };
        let p = pointing_game(&s, &b).unwrap();
        let q = pointing_game(&s.scale(k), &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - q).abs() < 1e-5);
    }

    #[test]
    fn softmax_sums_to_one(q in prop::collection::vec(-3200i32..3200, 1..12), shift in -100i32..100) {
        // Logits on a 1/64 grid so that shifting them is exact in f32.
        let l: Vec<f32> = q.iter().map(|&v| v as f32 / 64.0).collect();
        let shift = shift as f32;
        let p = softmax(&l);
        prop_assert!((p.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        let shifted: Vec<f32> = l.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_reference_aggregation_is_identity(f in stack_strategy(), seed in prop::collection::vec(-2f32..2.0, 4)) {
        let w = ChannelWeights::new(seed[..f.channels()].to_vec()).unwrap();
        let direct = activate(&compose_raw(&f, &w).unwrap(), Activation::Relu);
        for s in [Aggregation::AvgBeforeAct, Aggregation::MaxBeforeAct, Aggregation::AvgAfterAct] {
            prop_assert_eq!(&aggregate(std::slice::from_ref(&w), &f, s, Activation::Relu).unwrap(), &direct);
        }
    }

    #[test]
    fn head_scaling_scales_raw_maps(f in stack_strategy(), w in prop::collection::vec(-2f32..2.0, 12), s in 0.1f32..10.0) {
        let k = f.channels();
        let head = head_for(k, 3, &w);
        let scaled = head.scaled(s);
        let mut t = ExplanationTarget::finer(0, &[1, 2], 0.6, Method::Grad);
        t.activation = Activation::Identity;
        let raw = explain(&f, Some(&head), &t, None).unwrap();
        let raw_s = explain(&f, Some(&scaled), &t, None).unwrap();
        for (a, b) in raw.grid.as_slice().iter().zip(raw_s.grid.as_slice()) {
            prop_assert!((a * s - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
        t.activation = Activation::Relu;
        let n = normalize(&explain(&f, Some(&head), &t, None).unwrap()).unwrap();
        let n_s = normalize(&explain(&f, Some(&scaled), &t, None).unwrap()).unwrap();
        prop_assert!(n.grid.max_abs_diff(&n_s.grid) < 1e-5);
    }

    #[test]
    fn gamma_zero_is_bitwise_baseline(f in stack_strategy(), w in prop::collection::vec(-2f32..2.0, 12), d in 1usize..3) {
        let head = head_for(f.channels(), 3, &w);
        for method in [Method::Grad, Method::Layer] {
            let base = explain(&f, Some(&head), &ExplanationTarget::baseline(0, method), None).unwrap();
            let finer = explain(&f, Some(&head), &ExplanationTarget::finer(0, &[d], 0.0, method), None).unwrap();
            prop_assert_eq!(base, finer);
        }
    }

    #[test]
    fn upsampling_preserves_constants(v in -5f32..5.0, h in 1usize..5, w in 1usize..5, ho in 1usize..20, wo in 1usize..20) {
        let up = upsample_bilinear(&Grid::filled(h, w, v), ho, wo);
        prop_assert!(up.as_slice().iter().all(|&x| x == v));
    }
}

#[test]
fn deletion_starts_at_unmasked_confidence() {
    let weights: Vec<f32> = (0..32).map(|i| ((i * 7) % 5) as f32 * 0.3).collect();
    let b = LinearPixelBackend::new([4, 4, 1], weights, vec![0.0, 0.5], 1).unwrap();
    let img = Image::new(4, 4, 1, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
    let sal = Grid::new(4, 4, (0..16).map(|i| ((i * 3) % 16) as f32).collect()).unwrap();
    let curve = deletion_curve(&b, &img, &sal, 0.1, &Fill::Zero, 0, Some(1)).unwrap();
    let p = softmax(&b.logits(&img).unwrap());
    assert_eq!(curve.confidence_target[0], p[0] as f64);
    assert_eq!(curve.confidence_reference.unwrap()[0], p[1] as f64);
}

#[test]
fn score_gamma_zero_is_bitwise_baseline() {
    let b = LinearPixelBackend::new(
        [4, 4, 2],
        (0..96).map(|i| ((i * 13) % 7) as f32 - 3.0).collect(),
        vec![0.1, -0.2, 0.3],
        2,
    )
    .unwrap();
    let img = Image::new(4, 4, 2, (0..32).map(|i| ((i * 5) % 11) as f32 / 10.0).collect()).unwrap();
    let f = b.forward(&img, "pixels").unwrap().features;
    let ctx = ModelContext { backend: &b, image: &img, layer: None, baseline: None };
    let base = explain(&f, None, &ExplanationTarget::baseline(0, Method::Score), Some(&ctx)).unwrap();
    let finer = explain(&f, None, &ExplanationTarget::finer(0, &[2], 0.0, Method::Score), Some(&ctx)).unwrap();
    assert_eq!(base, finer);
}
