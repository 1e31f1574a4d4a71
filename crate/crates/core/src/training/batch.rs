use std::path::Path;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::ag::Tensor;
use crate::embedstore::{load_manifest, read_table, select_topk, EmbedError, EmbeddingTable, TripletManifest};
use crate::geometry::{augment, farthest_point_sample, read_point_cloud, AugmentSpec, GeometryError, PointCloud};

/// How clouds larger than the point budget are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsample {
    #[default]
    Fps,
    Truncate,
}

/// A validated manifest with its tables and every point cloud in memory.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub manifest: TripletManifest,
    pub image: EmbeddingTable,
    pub text: EmbeddingTable,
    clouds: Vec<PointCloud>,
}

/// Fills in the shape id on errors raised below the manifest level.
pub(crate) fn name_shape(err: EmbedError, id: &str) -> EmbedError {
    match err {
        EmbedError::EmptyCaptions { view_index, .. } => EmbedError::EmptyCaptions { shape_id: id.into(), view_index },
        EmbedError::DanglingRow { view_index, table, row, count, .. } => {
            EmbedError::DanglingRow { shape_id: id.into(), view_index, table, row, count }
        }
        other => other,
    }
}

impl TrainingData {
    pub fn new(
        manifest: TripletManifest,
        image: EmbeddingTable,
        text: EmbeddingTable,
        clouds: Vec<PointCloud>,
    ) -> Result<Self, TrainError> {
        manifest.validate(&image, &text)?;
        if clouds.len() != manifest.shapes.len() {
            return Err(TrainError::InvalidConfig(format!(
                "{} clouds for {} manifest shapes",
                clouds.len(),
                manifest.shapes.len()
            )));
        }
        if let Some(i) = clouds.iter().position(PointCloud::is_empty) {
            return Err(TrainError::Geometry {
                shape_id: manifest.shapes[i].shape_id.clone(),
                source: GeometryError::EmptyCloud,
            });
        }
        Ok(Self { manifest, image, text, clouds })
    }

    /// Reads the manifest, both tables, and every referenced UPC1 file.
    pub fn load(manifest_path: &Path, image_path: &Path, text_path: &Path) -> Result<Self, TrainError> {
        let manifest = load_manifest(manifest_path)?;
        let image = read_table(image_path)?;
        let text = read_table(text_path)?;
        manifest.validate(&image, &text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let clouds = manifest
            .shapes
            .iter()
            .map(|s| {
                read_point_cloud(manifest.cloud_path(base, s))
                    .map_err(|source| TrainError::Geometry { shape_id: s.shape_id.clone(), source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(manifest, image, text, clouds)
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.image.dim()
    }

    pub fn cloud(&self, i: usize) -> &PointCloud {
        &self.clouds[i]
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    /// Per-shape labels; errors on the first shape without one.
    pub fn labels(&self) -> Result<Vec<usize>, TrainError> {
        self.manifest
            .shapes
            .iter()
            .map(|s| s.label.ok_or_else(|| TrainError::MissingLabel(s.shape_id.clone())))
            .collect()
    }
}

/// Batch composition settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub batch_size: usize,
    pub point_budget: usize,
    pub subsample: Subsample,
    pub augment: AugmentSpec,
    pub caption_topk: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub shapes: Vec<usize>,
    pub views: Vec<usize>,
    pub clouds: Vec<PointCloud>,
    /// `B × D` image features of the chosen views.
    pub image: Tensor<f32>,
    /// `B × D` aggregated caption features of the chosen views.
    pub text: Tensor<f32>,
}

/// Draws training batches. Caption aggregation is computed once per view.
#[derive(Debug)]
pub struct BatchSampler<'a> {
    data: &'a TrainingData,
    spec: SampleSpec,
    captions: Vec<Vec<Vec<f32>>>,
}

/// Augments, then reduces to the point budget.
pub fn prepare_cloud(pc: &PointCloud, spec: &SampleSpec, seed: u64) -> Result<PointCloud, GeometryError> {
    let pc = if spec.augment == AugmentSpec::default() { pc.clone() } else { augment(pc, &spec.augment, seed)? };
    if pc.len() <= spec.point_budget {
        return Ok(pc);
    }
    let keep = match spec.subsample {
        Subsample::Fps => farthest_point_sample(&pc, spec.point_budget, (seed % pc.len() as u64) as usize)?,
        Subsample::Truncate => (0..spec.point_budget).collect(),
    };
    Ok(pc.select(&keep))
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a TrainingData, spec: SampleSpec) -> Result<Self, TrainError> {
        if spec.batch_size == 0 || spec.batch_size > data.len() {
            return Err(TrainError::InvalidConfig(format!(
                "batch size {} must be in 1..={} (shape count)",
                spec.batch_size,
                data.len()
            )));
        }
        if spec.point_budget == 0 {
            return Err(TrainError::InvalidConfig("point budget must be positive".into()));
        }
        spec.augment.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        let mut captions = Vec::with_capacity(data.len());
        for s in &data.manifest.shapes {
            let per_view = s
                .views
                .iter()
                .map(|v| select_topk(v, spec.caption_topk, &data.image, &data.text))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| name_shape(e, &s.shape_id))?;
            captions.push(per_view);
        }
        Ok(Self { data, spec, captions })
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }

    /// Distinct shapes, one uniform view each, and a per-item seed for
    /// augmentation, all drawn from `rng` in that order. Cloud preparation
    /// is spread over `workers` threads; the result does not depend on it.
    pub fn sample<R: RngCore>(&self, rng: &mut R, workers: usize) -> Result<Batch, TrainError> {
        let b = self.spec.batch_size;
        let shapes = index::sample(rng, self.data.len(), b).into_vec();
        let views: Vec<usize> =
            shapes.iter().map(|&s| rng.random_range(0..self.data.manifest.shapes[s].views.len())).collect();
        let seeds: Vec<u64> = (0..b).map(|_| rng.next_u64()).collect();

        let prepare = |i: usize| {
            let s = shapes[i];
            prepare_cloud(self.data.cloud(s), &self.spec, seeds[i]).map_err(|source| TrainError::Geometry {
                shape_id: self.data.manifest.shapes[s].shape_id.clone(),
                source,
            })
        };
        let clouds = if workers <= 1 {
            (0..b).map(prepare).collect::<Result<Vec<_>, _>>()?
        } else {
            let chunk = b.div_ceil(workers);
            let parts: Vec<Result<Vec<PointCloud>, TrainError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..b)
                    .step_by(chunk)
                    .map(|lo| {
                        let prepare = &prepare;
                        scope.spawn(move || (lo..(lo + chunk).min(b)).map(prepare).collect())
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
            });
            let mut clouds = Vec::with_capacity(b);
            for part in parts {
                clouds.extend(part?);
            }
            clouds
        };

        let d = self.data.dim();
        let mut image = Vec::with_capacity(b * d);
        let mut text = Vec::with_capacity(b * d);
        for (&s, &v) in shapes.iter().zip(&views) {
            image.extend_from_slice(self.data.image.row(self.data.manifest.shapes[s].views[v].image_row));
            text.extend_from_slice(&self.captions[s][v]);
        }
        Ok(Batch { shapes, views, clouds, image: Tensor::matrix(b, d, image)?, text: Tensor::matrix(b, d, text)? })
    }
}
