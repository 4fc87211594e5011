use serde::{Deserialize, Serialize};

use super::EvalError;

/// Continuous per-class attribute labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeTable {
    pub names: Vec<String>,
    /// One vector per class, each `names.len()` long.
    pub values: Vec<Vec<f32>>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>, values: Vec<Vec<f32>>) -> Result<Self, EvalError> {
        if let Some((c, v)) = values.iter().enumerate().find(|(_, v)| v.len() != names.len()) {
            return Err(EvalError::Attribute(format!(
                "class {c} has {} attributes, expected {}",
                v.len(),
                names.len()
            )));
        }
        Ok(Self { names, values })
    }
}

/// The `k` attributes with the largest `attr_c - attr_d`, ties by
/// ascending index.
pub fn select_discriminative_attributes(
    table: &AttributeTable,
    c: usize,
    d: usize,
    k: usize,
) -> Result<Vec<usize>, EvalError> {
    let n = table.values.len();
    let (Some(ac), Some(ad)) = (table.values.get(c), table.values.get(d)) else {
        return Err(EvalError::Attribute(format!("classes {c}, {d} not both in a table of {n}")));
    };
    if k > table.names.len() {
        return Err(EvalError::Attribute(format!("k = {k} exceeds {} attributes", table.names.len())));
    }
    let diff: Vec<f32> = ac.iter().zip(ad).map(|(a, b)| a - b).collect();
    let mut idx: Vec<usize> = (0..diff.len()).collect();
    idx.sort_by(|&a, &b| diff[b].total_cmp(&diff[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
