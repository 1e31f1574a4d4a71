use super::{EvalError, LabelEmbeddings};
use crate::ag::Tensor;
use crate::embedstore::clip_score;

/// Number of ranked categories returned per sample (fewer if C < 5).
pub const TOP_K: usize = 5;

/// `B × C` cosine scores of feature rows against label rows.
pub fn similarity_scores(features: &Tensor<f32>, labels: &LabelEmbeddings) -> Result<Vec<Vec<f64>>, EvalError> {
    if features.rank() != 2 || features.cols() != labels.dim() {
        return Err(EvalError::DimMismatch { features: *features.shape().last().unwrap_or(&0), labels: labels.dim() });
    }
    (0..features.rows())
        .map(|r| {
            (0..labels.count())
                .map(|c| Ok(clip_score(features.row(r), labels.table.row(c))?))
                .collect::<Result<Vec<f64>, EvalError>>()
        })
        .collect()
}

fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep ascending category id
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    ids.truncate(k);
    ids
}

/// Top-`min(5, C)` category ids per sample, best first, ties by lower id.
pub fn zero_shot_classify(features: &Tensor<f32>, labels: &LabelEmbeddings) -> Result<Vec<Vec<usize>>, EvalError> {
    let k = TOP_K.min(labels.count());
    Ok(similarity_scores(features, labels)?.iter().map(|s| top_k(s, k)).collect())
}
