use super::{Activation, Aggregation, CamError, ChannelWeights, FeatureStack, Resolution, SaliencyMap};
use crate::grid::Grid;

/// Pre-activation map `sum_k alpha_k A_k`, accumulated in channel order.
pub fn compose_raw(features: &FeatureStack, weights: &ChannelWeights) -> Result<Grid, CamError> {
    weights.check_len(features.channels())?;
    let mut out = vec![0f32; features.grid_count()];
    for (k, &alpha) in weights.values().iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(features.channel(k)) {
            *o += alpha * a;
        }
    }
    Ok(Grid::new(features.height(), features.width(), out)?)
}

pub fn activate(raw: &Grid, activation: Activation) -> SaliencyMap {
    let grid = match activation {
        Activation::Relu => raw.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Identity => raw.clone(),
    };
    SaliencyMap {
        grid,
        resolution: Resolution::Feature,
        normalized: false,
    }
}

fn mean_weights(list: &[ChannelWeights]) -> ChannelWeights {
    let mut acc = list[0].values().to_vec();
    for w in &list[1..] {
        for (a, &v) in acc.iter_mut().zip(w.values()) {
            *a += v;
        }
    }
    if list.len() > 1 {
        let t = list.len() as f32;
        acc.iter_mut().for_each(|a| *a /= t);
    }
    ChannelWeights(acc)
}

/// Combines per-reference raw maps. A single map passes through unchanged
/// for every strategy.
pub fn aggregate_raw(
    raws: &[Grid],
    strategy: Aggregation,
    activation: Activation,
) -> Result<SaliencyMap, CamError> {
    let first = raws.first().ok_or(CamError::EmptyReferences)?;
    for r in &raws[1..] {
        first.same_shape(r)?;
    }
    if raws.len() == 1 {
        return Ok(activate(first, activation));
    }
    let t = raws.len() as f32;
    match strategy {
        Aggregation::AvgBeforeAct => {
            let mut acc = first.clone();
            for r in &raws[1..] {
                for (a, &v) in acc.as_mut_slice().iter_mut().zip(r.as_slice()) {
                    *a += v;
                }
            }
            Ok(activate(&acc.map(|v| v / t), activation))
        }
        Aggregation::MaxBeforeAct => {
            let mut acc = first.clone();
            for r in &raws[1..] {
                for (a, &v) in acc.as_mut_slice().iter_mut().zip(r.as_slice()) {
                    *a = a.max(v);
                }
            }
            Ok(activate(&acc, activation))
        }
        Aggregation::AvgAfterAct => {
            let mut acc = activate(first, activation).grid;
            for r in &raws[1..] {
                let act = activate(r, activation).grid;
                for (a, &v) in acc.as_mut_slice().iter_mut().zip(act.as_slice()) {
                    *a += v;
                }
            }
            Ok(activate(&acc.map(|v| v / t), Activation::Identity))
        }
    }
}

/// Aggregates per-reference channel weights into one saliency map.
///
/// `AvgBeforeAct` averages the weights before composing, which equals
/// averaging the raw maps because composition is linear in the weights.
pub fn aggregate(
    per_reference: &[ChannelWeights],
    features: &FeatureStack,
    strategy: Aggregation,
    activation: Activation,
) -> Result<SaliencyMap, CamError> {
    if per_reference.is_empty() {
        return Err(CamError::EmptyReferences);
    }
    for w in per_reference {
        w.check_len(features.channels())?;
    }
    match strategy {
        Aggregation::AvgBeforeAct => {
            let raw = compose_raw(features, &mean_weights(per_reference))?;
            Ok(activate(&raw, activation))
        }
        _ => {
            let raws = per_reference
                .iter()
                .map(|w| compose_raw(features, w))
                .collect::<Result<Vec<_>, _>>()?;
            aggregate_raw(&raws, strategy, activation)
        }
    }
}

/// Divides by the maximum when it is positive.
pub fn normalize(map: &SaliencyMap) -> Result<SaliencyMap, CamError> {
    if map.grid.as_slice().iter().any(|&v| v < 0.0) {
        return Err(CamError::NegativeEntry);
    }
    let max = map.grid.max();
    let grid = if max > 0.0 { map.grid.map(|v| v / max) } else { map.grid.clone() };
    Ok(SaliencyMap {
        grid,
        resolution: map.resolution,
        normalized: true,
    })
}
