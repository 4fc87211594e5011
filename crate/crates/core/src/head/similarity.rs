use serde::{Deserialize, Serialize};

use super::{ClassifierHead, HeadError};

/// Class-averaged sorted cosine similarity between head rows.
///
/// `mean_by_rank[r]` is the mean over classes of the `(r + 1)`-th largest
/// similarity to any *other* class; `std_by_rank` is the population
/// standard deviation of the same column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub mean_by_rank: Vec<f64>,
    pub std_by_rank: Vec<f64>,
}

impl SimilarityProfile {
    /// `rank,mean,std` rows with a header line; ranks start at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,mean,std\n");
        for (r, (m, s)) in self.mean_by_rank.iter().zip(&self.std_by_rank).enumerate() {
            out.push_str(&format!("{},{},{}\n", r + 1, m, s));
        }
        out
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn check_rows(head: &ClassifierHead) -> Result<(), HeadError> {
    for c in 0..head.num_classes() {
        if head.row(c).iter().all(|&w| w == 0.0) {
            return Err(HeadError::ZeroNormRow(c));
        }
    }
    Ok(())
}

/// Self-similarity is left out of each row before sorting, so every row
/// contributes `C - 1` entries.
pub fn weight_similarity_profile(head: &ClassifierHead) -> Result<SimilarityProfile, HeadError> {
    let c = head.num_classes();
    if c < 2 {
        return Err(HeadError::TooFewClasses);
    }
    check_rows(head)?;
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|p| {
            let mut row: Vec<f64> = (0..c)
                .filter(|&q| q != p)
                .map(|q| cosine(head.row(p), head.row(q)))
                .collect();
            row.sort_by(|a, b| b.total_cmp(a));
            row
        })
        .collect();
    let n = c as f64;
    let mean_by_rank: Vec<f64> = (0..c - 1)
        .map(|r| rows.iter().map(|row| row[r]).sum::<f64>() / n)
        .collect();
    let std_by_rank = (0..c - 1)
        .map(|r| {
            let m = mean_by_rank[r];
            (rows.iter().map(|row| (row[r] - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect();
    Ok(SimilarityProfile {
        mean_by_rank,
        std_by_rank,
    })
}

/// The `count` classes whose rows are most cosine-similar to `target`'s,
/// ties broken by ascending class id.
pub fn rank_by_weight_similarity(
    head: &ClassifierHead,
    target: usize,
    count: usize,
) -> Result<Vec<usize>, HeadError> {
    head.check_class(target)?;
    let available = head.num_classes() - 1;
    if count > available {
        return Err(HeadError::TooManyReferences {
            requested: count,
            available,
        });
    }
    check_rows(head)?;
    let mut scored: Vec<(usize, f64)> = (0..head.num_classes())
        .filter(|&q| q != target)
        .map(|q| (q, cosine(head.row(target), head.row(q))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(count).map(|(q, _)| q).collect())
}
