use super::{
    aggregate, aggregate_raw, finer_weights, gradcam_weights_backend, gradcam_weights_final_layer, layercam_raw,
    scorecam_weights_for, uniform_gradients, CamError, ChannelWeights, ExplanationTarget, FeatureStack, Method,
    SaliencyMap,
};
use crate::backend::{LogitCombination, ModelBackend};
use crate::grid::Image;
use crate::head::ClassifierHead;

/// What a method needs beyond the feature stack: the model, the input
/// image, the layer the features came from (final layer when `None`) and
/// an optional Score-CAM baseline image.
#[derive(Clone, Copy)]
pub struct ModelContext<'a> {
    pub backend: &'a dyn ModelBackend,
    pub image: &'a Image,
    pub layer: Option<&'a str>,
    pub baseline: Option<&'a Image>,
}

impl ModelContext<'_> {
    fn layer(&self) -> &str {
        self.layer.unwrap_or_else(|| self.backend.descriptor().final_layer())
    }

    fn at_final_layer(&self) -> bool {
        self.layer() == self.backend.descriptor().final_layer()
    }
}

struct Inputs<'a> {
    features: &'a FeatureStack,
    head: Option<&'a ClassifierHead>,
    ctx: Option<&'a ModelContext<'a>>,
}

impl Inputs<'_> {
    /// The head identity applies when the features feed the head directly.
    fn use_head(&self) -> Option<&ClassifierHead> {
        match (self.head, self.ctx) {
            (Some(h), None) => Some(h),
            (Some(h), Some(ctx)) if ctx.at_final_layer() => Some(h),
            _ => None,
        }
    }

    fn context(&self, what: &'static str) -> Result<&ModelContext<'_>, CamError> {
        self.ctx.ok_or(CamError::BackendRequired(what))
    }

    fn grad_weights(&self, class: usize) -> Result<ChannelWeights, CamError> {
        if let Some(head) = self.use_head() {
            return gradcam_weights_final_layer(head, class, self.features.grid_count());
        }
        let ctx = self.context("Grad-CAM below the final layer")?;
        gradcam_weights_backend(ctx.backend, ctx.image, ctx.layer(), &LogitCombination::single(class))
    }

    fn gradients(&self, target: &LogitCombination) -> Result<FeatureStack, CamError> {
        if let Some(head) = self.use_head() {
            target.check(head.num_classes())?;
            let row = target.combine_rows(|c| head.row(c).to_vec(), head.dim());
            return uniform_gradients(self.features.shape(), &row);
        }
        let ctx = self.context("Layer-CAM below the final layer")?;
        Ok(ctx.backend.grad_features(ctx.image, ctx.layer(), target)?)
    }
}

/// Computes the saliency map for `target` at feature resolution.
///
/// With no references this is the baseline method for the target class.
/// Each reference `d` contributes one comparative result and the results
/// are combined with `target.aggregation`. The returned map is activated
/// but neither normalized nor upsampled.
pub fn explain(
    features: &FeatureStack,
    head: Option<&ClassifierHead>,
    target: &ExplanationTarget,
    ctx: Option<&ModelContext<'_>>,
) -> Result<SaliencyMap, CamError> {
    let num_classes = match (head, ctx) {
        (Some(h), _) => h.num_classes(),
        (None, Some(c)) => c.backend.descriptor().num_classes,
        (None, None) => return Err(CamError::BackendRequired("explanation without a head")),
    };
    target.validate(num_classes)?;
    let inputs = Inputs { features, head, ctx };
    if let Some(h) = inputs.use_head() {
        if h.dim() != features.channels() {
            return Err(CamError::LengthMismatch {
                expected: h.dim(),
                actual: features.channels(),
            });
        }
    }
    let c = target.target_class;
    let refs: Vec<Option<(usize, f32)>> = if target.references.is_empty() {
        vec![None]
    } else {
        target.references.iter().map(|r| Some((r.class, r.gamma))).collect()
    };

    match target.method {
        Method::Grad => {
            let alpha_c = inputs.grad_weights(c)?;
            let per_ref = refs
                .iter()
                .map(|r| match *r {
                    None => Ok(alpha_c.clone()),
                    Some((d, gamma)) => finer_weights(&alpha_c, &inputs.grad_weights(d)?, gamma),
                })
                .collect::<Result<Vec<_>, _>>()?;
            aggregate(&per_ref, features, target.aggregation, target.activation)
        }
        Method::Layer => {
            let raws = refs
                .iter()
                .map(|r| {
                    let combo = match *r {
                        None => LogitCombination::single(c),
                        Some((d, gamma)) => LogitCombination::difference(c, d, gamma),
                    };
                    layercam_raw(features, &inputs.gradients(&combo)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            aggregate_raw(&raws, target.aggregation, target.activation)
        }
        Method::Score => {
            let ctx = inputs.context("Score-CAM")?;
            let per_ref = refs
                .iter()
                .map(|&r| scorecam_weights_for(ctx.backend, ctx.image, features, c, r, ctx.baseline))
                .collect::<Result<Vec<_>, _>>()?;
            aggregate(&per_ref, features, target.aggregation, target.activation)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{StageSpec, ToyCnn};
    use crate::cam::{activate, compose_raw, Activation, Aggregation, Reference};
    use crate::head::HeadOrigin;

    fn head() -> ClassifierHead {
        ClassifierHead::new(
            3,
            2,
            vec![1.0, 0.5, 0.8, 0.6, -0.2, 0.3],
            None,
            vec!["a".into(), "b".into(), "c".into()],
            HeadOrigin::Trained,
        )
        .unwrap()
    }

    fn features() -> FeatureStack {
        FeatureStack::new(2, 2, 2, vec![1.0, 0.2, 0.0, 0.5, 0.3, 0.9, 0.4, 0.0]).unwrap()
    }

    #[test]
    fn baseline_matches_manual_gradcam() {
        let t = ExplanationTarget::baseline(0, Method::Grad);
        let m = explain(&features(), Some(&head()), &t, None).unwrap();
        let w = gradcam_weights_final_layer(&head(), 0, 4).unwrap();
        assert_eq!(m, activate(&compose_raw(&features(), &w).unwrap(), Activation::Relu));
    }

    #[test]
    fn finer_matches_manual_pipeline() {
        let t = ExplanationTarget::finer(0, &[1], 0.6, Method::Grad);
        let m = explain(&features(), Some(&head()), &t, None).unwrap();
        let wc = gradcam_weights_final_layer(&head(), 0, 4).unwrap();
        let wd = gradcam_weights_final_layer(&head(), 1, 4).unwrap();
        let w = finer_weights(&wc, &wd, 0.6).unwrap();
        assert_eq!(m, activate(&compose_raw(&features(), &w).unwrap(), Activation::Relu));
    }

    #[test]
    fn gamma_zero_equals_baseline() {
        for method in [Method::Grad, Method::Layer] {
            let base = explain(&features(), Some(&head()), &ExplanationTarget::baseline(0, method), None).unwrap();
            let t = ExplanationTarget::finer(0, &[2], 0.0, method);
            assert_eq!(explain(&features(), Some(&head()), &t, None).unwrap(), base);
        }
    }

    #[test]
    fn reversed_comparison_flips_raw_map() {
        let mut t = ExplanationTarget::finer(0, &[1], 1.0, Method::Grad);
        t.activation = Activation::Identity;
        let forward = explain(&features(), Some(&head()), &t, None).unwrap();
        let mut r = ExplanationTarget::finer(1, &[0], 1.0, Method::Grad);
        r.activation = Activation::Identity;
        let back = explain(&features(), Some(&head()), &r, None).unwrap();
        for (a, b) in forward.grid.as_slice().iter().zip(back.grid.as_slice()) {
            assert!((a + b).abs() < 1e-7);
        }
    }

    #[test]
    fn invalid_targets_rejected() {
        let h = head();
        let f = features();
        assert!(explain(&f, Some(&h), &ExplanationTarget::baseline(3, Method::Grad), None).is_err());
        assert!(explain(&f, Some(&h), &ExplanationTarget::finer(0, &[0], 0.6, Method::Grad), None).is_err());
        let mut t = ExplanationTarget::baseline(0, Method::Grad);
        t.references.push(Reference { class: 1, gamma: 4.5 });
        assert!(matches!(explain(&f, Some(&h), &t, None), Err(CamError::GammaOutOfRange(_))));
        assert!(matches!(
            explain(&f, Some(&h), &ExplanationTarget::baseline(0, Method::Score), None),
            Err(CamError::BackendRequired(_))
        ));
    }

    #[test]
    fn intermediate_layer_uses_backend_gradients() {
        let net = ToyCnn::random(5, [8, 8, 3], &[StageSpec { out_channels: 4, kernel: 3, pool: 2 }, StageSpec { out_channels: 5, kernel: 3, pool: 2 }], 3);
        let image = Image::new(8, 8, 3, (0..192).map(|i| ((i * 37) % 255) as f32 / 255.0).collect()).unwrap();
        let out = net.forward(&image, "block1").unwrap();
        let ctx = ModelContext {
            backend: &net,
            image: &image,
            layer: Some("block1"),
            baseline: None,
        };
        let mut t = ExplanationTarget::finer(0, &[1, 2], 0.6, Method::Layer);
        t.aggregation = Aggregation::AvgAfterAct;
        let m = explain(&out.features, None, &t, Some(&ctx)).unwrap();
        assert_eq!(m.grid.dims(), (4, 4));
        assert!(m.grid.min() >= 0.0);
        let g = explain(&out.features, None, &ExplanationTarget::baseline(0, Method::Grad), Some(&ctx)).unwrap();
        assert_eq!(g.grid.dims(), (4, 4));
        // The head only describes the final layer, so it is ignored here.
        assert_eq!(explain(&out.features, Some(net.head()), &t, Some(&ctx)).unwrap(), m);
    }
}
