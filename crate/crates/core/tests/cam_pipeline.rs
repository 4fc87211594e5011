use finercam_core::backend::{LinearPixelBackend, ModelBackend};
use finercam_core::cam::{
    activate, compose_raw, explain, finer_scorecam_weights, layercam_map, scorecam_weights, uniform_gradients,
    Activation, Aggregation, ChannelWeights, ExplanationTarget, FeatureStack, Method, ModelContext,
};
use finercam_core::fixtures::{random_image, toy_cnn, TOY_INPUT};
use finercam_core::grid::{Grid, Image};

#[test]
fn subtracting_maps_differs_from_subtracting_weights() {
    let f = FeatureStack::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let ac = ChannelWeights::new(vec![1.0, 1.0]).unwrap();
    let ad = ChannelWeights::new(vec![0.0, 2.0]).unwrap();
    let joint = finercam_core::cam::finer_weights(&ac, &ad, 1.0).unwrap();
    let finer = activate(&compose_raw(&f, &joint).unwrap(), Activation::Relu).grid;
    let mc = activate(&compose_raw(&f, &ac).unwrap(), Activation::Relu).grid;
    let md = activate(&compose_raw(&f, &ad).unwrap(), Activation::Relu).grid;
    let diff = Grid::new(1, 2, mc.as_slice().iter().zip(md.as_slice()).map(|(a, b)| a - b).collect()).unwrap();
    assert_eq!(finer.as_slice(), &[1.0, 0.0]);
    assert_eq!(diff.as_slice(), &[1.0, -1.0]);
    assert!(finer.max_abs_diff(&diff) > 0.1);
}

fn linear_fixture() -> (LinearPixelBackend, Image) {
    let weights: Vec<f32> = (0..3 * 16 * 2).map(|i| (((i * 7919) % 13) as f32 - 6.0) / 4.0).collect();
    let b = LinearPixelBackend::new([4, 4, 2], weights, vec![0.5, -0.25, 1.0], 2).unwrap();
    let img = Image::new(4, 4, 2, (0..32).map(|i| ((i * 37) % 17) as f32 / 16.0).collect()).unwrap();
    (b, img)
}

/// `sum_p P_c[p] x[p] H[p]` with the mask broadcast over channels.
fn masked_logit(b: &LinearPixelBackend, img: &Image, mask: &Grid, c: usize) -> f64 {
    let w = b.class_weights(c);
    let ch = img.channels();
    img.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &x)| w[i] as f64 * x as f64 * mask.as_slice()[i / ch] as f64)
        .sum()
}

#[test]
fn score_weights_match_closed_form_on_linear_backend() {
    let (b, img) = linear_fixture();
    let feats = b.forward(&img, "pixels").unwrap().features;
    let masks = finercam_core::cam::channel_masks(&feats, 4, 4);
    let plain = scorecam_weights(&b, &img, 0, None).unwrap();
    let finer = finer_scorecam_weights(&b, &img, 0, 2, 0.6, None).unwrap();
    for (k, mask) in masks.iter().enumerate() {
        // The zero-image logit cancels into the bias terms.
        let yc = masked_logit(&b, &img, mask, 0) + 0.5;
        let yd = masked_logit(&b, &img, mask, 2) + 1.0;
        assert!((plain.values()[k] as f64 - (yc - 0.5)).abs() < 1e-4);
        assert!((finer.values()[k] as f64 - (yc - 0.6 * yd - 0.5)).abs() < 1e-4);
    }
}

#[test]
fn identical_logit_functions_cancel_in_score_weights() {
    let n = 16 * 2;
    let row: Vec<f32> = (0..n).map(|i| (i % 5) as f32 * 0.2).collect();
    let weights = [row.clone(), row].concat();
    let b = LinearPixelBackend::new([4, 4, 2], weights, vec![0.75, 0.75], 2).unwrap();
    let (_, img) = linear_fixture();
    let w = finer_scorecam_weights(&b, &img, 0, 1, 1.0, None).unwrap();
    assert!(w.values().iter().all(|&v| (v + 0.75).abs() < 1e-5));
}

#[test]
fn layercam_with_constant_gradients_is_gradcam() {
    let (b, img) = linear_fixture();
    let f = b.forward(&img, "pixels").unwrap().features;
    let row = [0.8f32, 0.3];
    let g = uniform_gradients(f.shape(), &row).unwrap();
    let layer = layercam_map(&f, &g).unwrap();
    let grad = activate(&compose_raw(&f, &ChannelWeights::new(g.pooled().to_vec()).unwrap()).unwrap(), Activation::Relu);
    assert!(layer.grid.max_abs_diff(&grad.grid) < 1e-6);
    let neg = uniform_gradients(f.shape(), &[-1.0, -2.0]).unwrap();
    assert!(layercam_map(&f, &neg).unwrap().grid.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn every_method_runs_on_the_toy_network() {
    let net = toy_cnn(12);
    let image = random_image(13, TOY_INPUT);
    for layer in ["block2", "block3"] {
        let f = net.forward(&image, layer).unwrap().features;
        let ctx = ModelContext { backend: &net, image: &image, layer: Some(layer), baseline: None };
        for method in [Method::Grad, Method::Layer, Method::Score] {
            for agg in [Aggregation::AvgBeforeAct, Aggregation::MaxBeforeAct, Aggregation::AvgAfterAct] {
                let mut t = ExplanationTarget::finer(1, &[0, 4, 5], 0.6, method);
                t.aggregation = agg;
                let m = explain(&f, Some(net.head()), &t, Some(&ctx)).unwrap();
                assert_eq!(m.grid.dims(), (f.height(), f.width()));
                assert!(m.grid.min() >= 0.0);
                let base = explain(&f, Some(net.head()), &ExplanationTarget::baseline(1, method), Some(&ctx)).unwrap();
                let zero = explain(&f, Some(net.head()), &ExplanationTarget::finer(1, &[3], 0.0, method), Some(&ctx))
                    .unwrap();
                assert_eq!(base, zero, "{layer} {method:?}");
            }
        }
    }
}

#[test]
fn head_path_matches_backend_gradients_at_final_layer() {
    let net = toy_cnn(2);
    let image = random_image(5, TOY_INPUT);
    let f = net.forward(&image, "block3").unwrap().features;
    let ctx = ModelContext { backend: &net, image: &image, layer: Some("block3"), baseline: None };
    for method in [Method::Grad, Method::Layer] {
        let t = ExplanationTarget::finer(3, &[1, 2], 0.6, method);
        let via_head = explain(&f, Some(net.head()), &t, None).unwrap();
        let via_backend = explain(&f, None, &t, Some(&ctx)).unwrap();
        assert!(via_head.grid.max_abs_diff(&via_backend.grid) < 1e-6);
    }
}
