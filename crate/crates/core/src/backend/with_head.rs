use super::{BackendDescriptor, BackendError, ForwardOutput, LogitCombination, ModelBackend};
use crate::features::FeatureStack;
use crate::grid::Image;
use crate::head::ClassifierHead;

/// Replaces a backend's logits with `head(pooled final-layer features)`.
///
/// This is how a head trained over exported embeddings is evaluated on an
/// external backbone. Gradients are only available at the final layer,
/// where they follow from the head rows.
pub struct WithHead<B> {
    inner: B,
    head: ClassifierHead,
    descriptor: BackendDescriptor,
}

impl<B: ModelBackend> WithHead<B> {
    pub fn new(inner: B, head: ClassifierHead) -> Result<Self, BackendError> {
        let mut descriptor = inner.descriptor().clone();
        let [k, _, _] = *descriptor.feature_shapes.last().ok_or(BackendError::Protocol(
            "backend declares no layers".into(),
        ))?;
        if head.dim() != k {
            return Err(crate::grid::ShapeError::new(&[k], &[head.dim()]).into());
        }
        descriptor.num_classes = head.num_classes();
        Ok(Self {
            inner,
            head,
            descriptor,
        })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ModelBackend> ModelBackend for WithHead<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError> {
        let final_layer = self.descriptor.final_layer().to_string();
        let pooled = if layer == final_layer {
            let out = self.inner.forward(image, layer)?;
            let logits = self.head.logits(out.features.pooled())?;
            return Ok(ForwardOutput {
                features: out.features,
                logits,
            });
        } else {
            self.inner.forward(image, &final_layer)?.features.pooled().to_vec()
        };
        let features = self.inner.forward(image, layer)?.features;
        Ok(ForwardOutput {
            features,
            logits: self.head.logits(&pooled)?,
        })
    }

    fn grad_features(
        &self,
        image: &Image,
        layer: &str,
        target: &LogitCombination,
    ) -> Result<FeatureStack, BackendError> {
        if layer != self.descriptor.final_layer() {
            return Err(BackendError::Unsupported("gradients below the final layer"));
        }
        target.check(self.head.num_classes())?;
        self.descriptor.check_image(image)?;
        let [k, h, w] = *self.descriptor.feature_shapes.last().expect("checked in new");
        let z = (h * w) as f32;
        let combined = target.combine_rows(|c| self.head.row(c).to_vec(), k);
        let data = combined
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / z, h * w))
            .collect();
        Ok(FeatureStack::new(k, h, w, data)?)
    }

    fn supports_gradients(&self) -> bool {
        true
    }
}
