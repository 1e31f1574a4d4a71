//! Seeded primitive-shape datasets and mock frozen image/text encoders.

mod mock;
mod primitives;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{save_manifest, write_table, EmbedError};
use crate::eval::EvalError;
use crate::format::write_atomic;
use crate::geometry::{
    make_viewpoints, normalize_unit_sphere, render_pointsplat, sample_surface, write_point_cloud, GeometryError, Mesh,
    PointCloud, DEFAULT_ELEVATION_DEG,
};
use crate::training::{TrainError, TrainingData};

pub use mock::{mock_frozen_encoders, MockEncoders};
pub use primitives::Primitive;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("shape `{shape_id}`: {source}")]
    Geometry { shape_id: String, source: GeometryError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub categories: Vec<Primitive>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Std-dev of per-vertex displacement along the vertex normal.
    pub sigma_shape: f64,
    /// Per-axis scale factors are drawn from `[1 - j, 1 + j]`.
    pub scale_jitter: f64,
    pub points: usize,
    pub embed_dim: usize,
    /// Norm of the image-embedding perturbation before renormalizing.
    pub sigma_image: f64,
    /// Norm of the caption-embedding perturbation before renormalizing.
    pub sigma_text: f64,
    pub views: usize,
    pub captions_per_view: usize,
    /// Captions per view built from some other category's anchor.
    pub wrong_captions: usize,
    /// How far a single view's embeddings lean toward a confusable
    /// category. Each (category, view) pair draws a blend weight from
    /// `[0, view_ambiguity]`; 0 puts every view on its own anchor.
    pub view_ambiguity: f64,
    pub color: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: Primitive::ALL.to_vec(),
            train_per_class: 35,
            test_per_class: 10,
            sigma_shape: 0.01,
            scale_jitter: 0.15,
            points: 2048,
            embed_dim: 64,
            sigma_image: 0.05,
            sigma_text: 0.05,
            views: 12,
            captions_per_view: 10,
            wrong_captions: 0,
            view_ambiguity: 0.0,
            color: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.categories.len() < 2 {
            return bad(format!("need at least 2 categories, got {}", self.categories.len()));
        }
        let mut seen = self.categories.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.categories.len() {
            return bad("categories repeat".into());
        }
        for (name, v) in
            [("sigma_shape", self.sigma_shape), ("sigma_image", self.sigma_image), ("sigma_text", self.sigma_text)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.view_ambiguity) {
            return bad(format!("view_ambiguity must lie in [0, 1], got {}", self.view_ambiguity));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return bad(format!("scale_jitter must lie in [0, 1), got {}", self.scale_jitter));
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        if self.points == 0 || self.embed_dim == 0 || self.views == 0 || self.captions_per_view == 0 {
            return bad("points, embed_dim, views and captions_per_view must be positive".into());
        }
        if self.wrong_captions > self.captions_per_view {
            return bad(format!(
                "wrong_captions {} exceeds captions_per_view {}",
                self.wrong_captions, self.captions_per_view
            ));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|p| p.name().to_string()).collect()
    }
}

/// One generated instance. `mesh` is the noised canonical mesh; scale and
/// rotation are applied by [`SynthShape::posed_mesh`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthShape {
    pub shape_id: String,
    pub label: usize,
    pub train: bool,
    pub mesh: Mesh,
    pub scale: [f64; 3],
    /// Rotation about z, radians.
    pub rotation: f64,
    pub color: Option<[f32; 3]>,
    pub sample_seed: u64,
}

impl SynthShape {
    pub fn posed_mesh(&self) -> Mesh {
        let (s, c) = self.rotation.sin_cos();
        let vertices = self
            .mesh
            .vertices
            .iter()
            .map(|v| {
                let [x, y, z] = std::array::from_fn(|k| f64::from(v[k]) * self.scale[k]);
                [(c * x - s * y) as f32, (s * x + c * y) as f32, z as f32]
            })
            .collect();
        Mesh {
            vertices,
            colors: self.color.map(|col| vec![col; self.mesh.vertices.len()]),
            triangles: self.mesh.triangles.clone(),
        }
    }

    /// `n` surface samples of the posed mesh, centered and scaled into the unit ball.
    pub fn point_cloud(&self, n: usize) -> Result<PointCloud, SynthError> {
        let named = |source| SynthError::Geometry { shape_id: self.shape_id.clone(), source };
        let pc = sample_surface(&self.posed_mesh(), n, self.sample_seed).map_err(named)?;
        normalize_unit_sphere(&pc).map_err(named)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    /// Category-major; the split is recorded on each shape.
    pub shapes: Vec<SynthShape>,
}

impl SynthDataset {
    pub fn train_shapes(&self) -> impl Iterator<Item = &SynthShape> {
        self.shapes.iter().filter(|s| s.train)
    }

    pub fn test_shapes(&self) -> impl Iterator<Item = &SynthShape> {
        self.shapes.iter().filter(|s| !s.train)
    }
}

/// Unit normals from the area-weighted sum of incident face normals.
fn vertex_normals(mesh: &Mesh) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0f64; 3]; mesh.vertices.len()];
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.vertices[i].map(f64::from));
        let n = primitives::cross(primitives::sub(b, a), primitives::sub(c, a));
        for &i in tri {
            (0..3).for_each(|k| acc[i][k] += n[k]);
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 0.0 {
                n.map(|x| x / len)
            } else {
                [0.0; 3]
            }
        })
        .collect()
}

fn category_color(c: usize, count: usize) -> [f32; 3] {
    let h = c as f64 / count as f64 * std::f64::consts::TAU;
    [0.0, 1.0, 2.0].map(|k| (0.5 + 0.4 * (h + k * std::f64::consts::TAU / 3.0).cos()) as f32)
}

/// Generates every instance of every category. Each shape draws from its
/// own rng seeded off the master stream, so the output only depends on the
/// spec.
pub fn gen_dataset(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    master.set_stream(0);
    let per_class = spec.train_per_class + spec.test_per_class;
    let mut shapes = Vec::with_capacity(per_class * spec.categories.len());
    for (label, prim) in spec.categories.iter().enumerate() {
        let base = prim.mesh();
        let normals = vertex_normals(&base);
        let test_slots: Vec<usize> = rand::seq::index::sample(&mut master, per_class, spec.test_per_class).into_vec();
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let limit = 3.0 * spec.sigma_shape;
            let vertices = base
                .vertices
                .iter()
                .zip(&normals)
                .map(|(v, n)| {
                    let z: f64 = rng.sample(StandardNormal);
                    let d = (spec.sigma_shape * z).clamp(-limit, limit);
                    std::array::from_fn(|k| (f64::from(v[k]) + d * n[k]) as f32)
                })
                .collect();
            let j = spec.scale_jitter;
            let scale = std::array::from_fn(|_| 1.0 + j * (2.0 * rng.random::<f64>() - 1.0));
            let rotation = rng.random::<f64>() * std::f64::consts::TAU;
            let color = spec.color.then(|| {
                let base = category_color(label, spec.categories.len());
                base.map(|x| (f64::from(x) + 0.05 * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0) as f32)
            });
            shapes.push(SynthShape {
                shape_id: format!("{}_{i:03}", prim.name()),
                label,
                train: !test_slots.contains(&i),
                mesh: Mesh { vertices, colors: None, triangles: base.triangles.clone() },
                scale,
                rotation,
                color,
                sample_seed: rng.next_u64(),
            });
        }
    }
    Ok(SynthDataset { spec: spec.clone(), shapes })
}

/// A generated dataset with its sampled clouds and mock tables.
#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub dataset: SynthDataset,
    pub mock: MockEncoders,
    /// Aligned with `dataset.shapes`.
    pub clouds: Vec<PointCloud>,
}

impl SynthBundle {
    pub fn build(spec: &SynthSpec) -> Result<Self, SynthError> {
        let dataset = gen_dataset(spec)?;
        let mock = mock_frozen_encoders(spec, &dataset)?;
        let clouds = dataset.shapes.iter().map(|s| s.point_cloud(spec.points)).collect::<Result<_, _>>()?;
        Ok(Self { dataset, mock, clouds })
    }

    fn split(&self, train: bool) -> Vec<PointCloud> {
        self.dataset.shapes.iter().zip(&self.clouds).filter(|(s, _)| s.train == train).map(|(_, c)| c.clone()).collect()
    }

    /// Training split in memory, without touching disk.
    pub fn training_data(&self) -> Result<TrainingData, TrainError> {
        TrainingData::new(self.mock.train.clone(), self.mock.image.clone(), self.mock.text.clone(), self.split(true))
    }

    pub fn test_clouds(&self) -> Vec<PointCloud> {
        self.split(false)
    }

    pub fn test_labels(&self) -> Vec<usize> {
        self.dataset.test_shapes().map(|s| s.label).collect()
    }

    pub fn train_clouds(&self) -> Vec<PointCloud> {
        self.split(true)
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.dataset.train_shapes().map(|s| s.label).collect()
    }

    /// Writes the dataset in the on-disk interchange formats:
    ///
    /// ```text
    /// spec.json  image.ulp2  text.ulp2  labels.ulp2  labels.txt
    /// train_manifest.json  test_manifest.json  clouds/<shape_id>.upc
    /// renders/<shape_id>_v<view>.pgm   (only with `render_res`)
    /// ```
    ///
    /// Returns the written paths in write order.
    pub fn write(&self, dir: &Path, render_res: Option<usize>) -> Result<Vec<PathBuf>, SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        let clouds_dir = dir.join("clouds");
        fs::create_dir_all(&clouds_dir).map_err(io(&clouds_dir))?;
        let mut written = Vec::new();

        let spec_path = dir.join("spec.json");
        let json = serde_json::to_string_pretty(&self.dataset.spec).expect("spec serializes") + "\n";
        write_atomic(&spec_path, json.as_bytes()).map_err(io(&spec_path))?;
        written.push(spec_path);

        for (name, table) in
            [("image.ulp2", &self.mock.image), ("text.ulp2", &self.mock.text), ("labels.ulp2", &self.mock.labels.table)]
        {
            let p = dir.join(name);
            write_table(table, &p)?;
            written.push(p);
        }
        let names_path = dir.join("labels.txt");
        let names = self.mock.labels.names.iter().map(|n| format!("{n}\n")).collect::<String>();
        write_atomic(&names_path, names.as_bytes()).map_err(io(&names_path))?;
        written.push(names_path);

        for (name, manifest) in [("train_manifest.json", &self.mock.train), ("test_manifest.json", &self.mock.test)] {
            let p = dir.join(name);
            save_manifest(manifest, &p)?;
            written.push(p);
        }

        let views = match render_res {
            Some(_) => {
                let renders = dir.join("renders");
                fs::create_dir_all(&renders).map_err(io(&renders))?;
                make_viewpoints(self.dataset.spec.views, DEFAULT_ELEVATION_DEG).expect("views validated")
            }
            None => Vec::new(),
        };
        for (shape, cloud) in self.dataset.shapes.iter().zip(&self.clouds) {
            let named = |source| SynthError::Geometry { shape_id: shape.shape_id.clone(), source };
            let p = clouds_dir.join(format!("{}.upc", shape.shape_id));
            write_point_cloud(cloud, &p).map_err(named)?;
            written.push(p);
            if let Some(res) = render_res {
                for view in &views {
                    let img = render_pointsplat(cloud, view, res).map_err(named)?;
                    let p = dir.join("renders").join(format!("{}_v{:02}.pgm", shape.shape_id, view.index));
                    write_atomic(&p, &img.to_pgm()).map_err(io(&p))?;
                    written.push(p);
                }
            }
        }
        Ok(written)
    }
}
