use super::{EmbedError, EmbeddingTable, ViewRecord};

/// Below this norm an aggregated caption direction is considered undefined.
const MIN_AGGREGATE_NORM: f64 = 1e-6;

/// Dot product of two embedding rows (their cosine when both are unit).
pub fn clip_score(a: &[f32], b: &[f32]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum())
}

fn view_image<'t>(view: &ViewRecord, image: &'t EmbeddingTable) -> Result<&'t [f32], EmbedError> {
    image.get(view.image_row).ok_or(EmbedError::DanglingRow {
        shape_id: String::new(),
        view_index: view.view_index,
        table: "image",
        row: view.image_row,
        count: image.count(),
    })
}

/// Caption rows of `view` ordered by CLIP score against the view's image,
/// best first. Equal scores keep their original order.
pub fn rank_captions(
    view: &ViewRecord,
    image: &EmbeddingTable,
    text: &EmbeddingTable,
) -> Result<Vec<usize>, EmbedError> {
    if view.caption_rows.is_empty() {
        return Err(EmbedError::EmptyCaptions { shape_id: String::new(), view_index: view.view_index });
    }
    let query = view_image(view, image)?;
    let mut scored = Vec::with_capacity(view.caption_rows.len());
    for &row in &view.caption_rows {
        let caption = text.get(row).ok_or(EmbedError::DanglingRow {
            shape_id: String::new(),
            view_index: view.view_index,
            table: "text",
            row,
            count: text.count(),
        })?;
        scored.push((row, clip_score(query, caption)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored.into_iter().map(|(row, _)| row).collect())
}

/// Language-modality embedding for a view: the best caption for `k = 1`,
/// otherwise the re-normalized mean of the `k` best captions.
pub fn select_topk(
    view: &ViewRecord,
    k: usize,
    image: &EmbeddingTable,
    text: &EmbeddingTable,
) -> Result<Vec<f32>, EmbedError> {
    if k == 0 || k > view.caption_rows.len() {
        return Err(EmbedError::TopKOutOfRange { k, available: view.caption_rows.len() });
    }
    let ranked = rank_captions(view, image, text)?;
    if k == 1 {
        return Ok(text.row(ranked[0]).to_vec());
    }
    let mut mean = vec![0.0f64; text.dim()];
    for &row in &ranked[..k] {
        for (m, v) in mean.iter_mut().zip(text.row(row)) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > MIN_AGGREGATE_NORM) {
        return Err(EmbedError::DegenerateMean(norm));
    }
    Ok(mean.into_iter().map(|v| (v / norm) as f32).collect())
}
