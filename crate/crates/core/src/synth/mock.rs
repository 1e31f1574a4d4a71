use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SynthDataset, SynthError, SynthSpec};
use crate::embedstore::{EmbeddingTable, ShapeRecord, TripletManifest, ViewRecord};
use crate::eval::LabelEmbeddings;

/// Stand-in outputs of a frozen, pre-aligned image/text encoder pair.
#[derive(Clone, Debug)]
pub struct MockEncoders {
    pub image: EmbeddingTable,
    pub text: EmbeddingTable,
    pub labels: LabelEmbeddings,
    pub train: TripletManifest,
    pub test: TripletManifest,
    pub warnings: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Uniform over every class except `c`.
fn other_class(rng: &mut ChaCha8Rng, c: usize, classes: usize) -> usize {
    let k = rng.random_range(0..classes - 1);
    if k >= c {
        k + 1
    } else {
        k
    }
}

/// `normalize(a + sigma * g / sqrt(D))`, so `sigma` is the expected norm of
/// the perturbation whatever the dimension. The noise is drawn even at
/// `sigma = 0` so changing sigma never shifts later draws.
fn perturb(rng: &mut ChaCha8Rng, anchor: &[f64], sigma: f64) -> Vec<f64> {
    let g = gaussian(rng, anchor.len());
    if sigma == 0.0 {
        return anchor.to_vec();
    }
    let k = sigma / (anchor.len() as f64).sqrt();
    unit(&anchor.iter().zip(&g).map(|(a, g)| a + k * g).collect::<Vec<_>>())
}

/// Builds one image row per (shape, view) and `captions_per_view` caption
/// rows per view, all clustered around per-category unit anchors. Rows are
/// laid out shape-major in `dataset.shapes` order; both manifests index the
/// same tables.
pub fn mock_frozen_encoders(spec: &SynthSpec, dataset: &SynthDataset) -> Result<MockEncoders, SynthError> {
    spec.validate()?;
    let d = spec.embed_dim;
    let classes = spec.categories.len();
    let mut warnings = Vec::new();
    if d < classes {
        warnings.push(format!("embed_dim {d} is below the category count {classes}; anchors may nearly collide"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let anchors: Vec<Vec<f64>> = (0..classes).map(|_| unit(&gaussian(&mut rng, d))).collect();

    // Per (category, view) center: the anchor, blended toward another
    // category's anchor when views are ambiguous.
    rng.set_stream(3);
    rng.set_word_pos(0);
    let centers: Vec<Vec<Vec<f64>>> = (0..classes)
        .map(|c| {
            (0..spec.views)
                .map(|_| {
                    let k = other_class(&mut rng, c, classes);
                    let w = rng.random::<f64>() * spec.view_ambiguity;
                    if w == 0.0 {
                        anchors[c].clone()
                    } else {
                        unit(
                            &anchors[c].iter().zip(&anchors[k]).map(|(a, b)| (1.0 - w) * a + w * b).collect::<Vec<_>>(),
                        )
                    }
                })
                .collect()
        })
        .collect();

    rng.set_stream(2);
    rng.set_word_pos(0);
    let mut image = Vec::new();
    let mut text = Vec::new();
    let mut train = TripletManifest::default();
    let mut test = TripletManifest::default();
    for shape in &dataset.shapes {
        let mut views = Vec::with_capacity(spec.views);
        for (v, center) in centers[shape.label].iter().enumerate() {
            let image_row = image.len() / d;
            image.extend(perturb(&mut rng, center, spec.sigma_image));
            let mut caption_rows = Vec::with_capacity(spec.captions_per_view);
            for k in 0..spec.captions_per_view {
                let target = if k < spec.wrong_captions {
                    &anchors[other_class(&mut rng, shape.label, classes)]
                } else {
                    center
                };
                caption_rows.push(text.len() / d);
                text.extend(perturb(&mut rng, target, spec.sigma_text));
            }
            views.push(ViewRecord { view_index: v, image_row, caption_rows });
        }
        let record = ShapeRecord {
            shape_id: shape.shape_id.clone(),
            point_cloud_path: format!("clouds/{}.upc", shape.shape_id),
            label: Some(shape.label),
            views,
        };
        if shape.train { &mut train } else { &mut test }.shapes.push(record);
    }

    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let image = EmbeddingTable::new(d, to_f32(image), "mock-image")?;
    let text = EmbeddingTable::new(d, to_f32(text), "mock-text")?;
    let label_table = EmbeddingTable::new(d, to_f32(anchors.concat()), "mock-labels")?;
    image.validate()?;
    text.validate()?;
    label_table.validate()?;
    let labels = LabelEmbeddings::new(spec.category_names(), label_table)?;
    Ok(MockEncoders { image, text, labels, train, test, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{clip_score, rank_captions};
    use crate::synth::gen_dataset;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec { train_per_class: 2, test_per_class: 1, points: 64, views: 3, seed, ..SynthSpec::default() }
    }

    fn build(s: &SynthSpec) -> MockEncoders {
        mock_frozen_encoders(s, &gen_dataset(s).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_reproduces_anchors() {
        let s = SynthSpec { sigma_image: 0.0, sigma_text: 0.0, ..spec(1) };
        let m = build(&s);
        for rec in m.train.shapes.iter().chain(&m.test.shapes) {
            let anchor = m.labels.table.row(rec.label.unwrap());
            for v in &rec.views {
                assert_eq!(m.image.row(v.image_row), anchor);
                for &c in &v.caption_rows {
                    assert_eq!(m.text.row(c), anchor);
                }
            }
        }
    }

    #[test]
    fn zero_noise_ranking_is_a_full_tie() {
        let s = SynthSpec { sigma_image: 0.0, sigma_text: 0.0, ..spec(2) };
        let m = build(&s);
        for v in &m.train.shapes[0].views {
            assert_eq!(rank_captions(v, &m.image, &m.text).unwrap(), v.caption_rows);
        }
    }

    #[test]
    fn anchors_are_well_separated_at_dim_64() {
        let mut ok = 0;
        for seed in 0..100 {
            let m = build(&SynthSpec { train_per_class: 1, test_per_class: 0, ..spec(1000 + seed) });
            let t = &m.labels.table;
            let mut max_cos = f64::NEG_INFINITY;
            for i in 0..t.count() {
                for j in i + 1..t.count() {
                    max_cos = max_cos.max(clip_score(t.row(i), t.row(j)).unwrap());
                }
            }
            if max_cos < 60f64.to_radians().cos() {
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}/100 seeds had all anchors > 60° apart");
    }

    #[test]
    fn same_shape_image_and_caption_agree() {
        let m = build(&SynthSpec { views: 12, train_per_class: 9, test_per_class: 0, ..spec(3) });
        let mut scores = Vec::new();
        'outer: for rec in &m.train.shapes {
            for v in &rec.views {
                for &c in &v.caption_rows {
                    scores.push(clip_score(m.image.row(v.image_row), m.text.row(c)).unwrap());
                    if scores.len() == 1000 {
                        break 'outer;
                    }
                }
            }
        }
        assert_eq!(scores.len(), 1000);
        let mean = scores.iter().sum::<f64>() / 1000.0;
        assert!(mean > 0.99, "mean clip score {mean}");
    }

    #[test]
    fn wrong_captions_come_from_other_anchors() {
        let s = SynthSpec { sigma_image: 0.0, sigma_text: 0.0, wrong_captions: 2, ..spec(4) };
        let m = build(&s);
        for rec in &m.train.shapes {
            let own = m.labels.table.row(rec.label.unwrap());
            for v in &rec.views {
                let wrong = v.caption_rows.iter().filter(|&&c| m.text.row(c) != own).count();
                assert_eq!(wrong, 2);
            }
        }
    }

    #[test]
    fn manifests_wire_rows_and_split() {
        let s = spec(5);
        let m = build(&s);
        assert_eq!(m.train.shapes.len(), 16);
        assert_eq!(m.test.shapes.len(), 8);
        m.train.validate(&m.image, &m.text).unwrap();
        m.test.validate(&m.image, &m.text).unwrap();
        assert_eq!(m.image.count(), 24 * 3);
        assert_eq!(m.text.count(), 24 * 3 * 10);
        assert!(m
            .train
            .shapes
            .iter()
            .all(|r| r.views.len() == 3 && r.views.iter().all(|v| v.caption_rows.len() == 10)));
        assert!(m.warnings.is_empty());
        assert_eq!(m.labels.names[0], "sphere");
    }

    #[test]
    fn ambiguous_views_lean_toward_one_other_anchor() {
        let s = SynthSpec { sigma_image: 0.0, sigma_text: 0.0, view_ambiguity: 1.0, ..spec(7) };
        let m = build(&s);
        let t = &m.labels.table;
        for rec in &m.train.shapes {
            let c = rec.label.unwrap();
            for v in &rec.views {
                let img = m.image.row(v.image_row);
                let sims: Vec<f64> = (0..t.count()).map(|k| clip_score(img, t.row(k)).unwrap()).collect();
                let leaning = (0..t.count()).filter(|&k| k != c && sims[k] > 0.5).count();
                assert!(leaning <= 1, "{sims:?}");
                assert!(v.caption_rows.iter().all(|&r| m.text.row(r) == img));
            }
        }
        assert_eq!(build(&spec(7)).labels.table, m.labels.table);
    }

    #[test]
    fn small_dim_warns() {
        let m = build(&SynthSpec { embed_dim: 4, ..spec(6) });
        assert_eq!(m.warnings.len(), 1);
    }
}
