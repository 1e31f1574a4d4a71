//! Meshes, point clouds, sampling, viewpoints and a point-splat renderer.

mod augment;
mod mesh;
mod render;
mod sampling;
mod upc;

use std::path::PathBuf;

use thiserror::Error;

use crate::format::FormatError;

pub use augment::{augment, AugmentSpec};
pub use mesh::{load_mesh, parse_obj, Mesh};
pub use render::{make_viewpoints, render_pointsplat, DepthImage, Viewpoint, DEFAULT_ELEVATION_DEG};
pub use sampling::{farthest_point_sample, normalize_unit_sphere, sample_surface};
pub use upc::{decode_point_cloud, encode_point_cloud, read_point_cloud, write_point_cloud};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: vertex index {index} out of range (mesh has {count} vertices)")]
    IndexOutOfRange { line: usize, index: i64, count: usize },
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("color array has {colors} entries for {points} points")]
    ColorCount { points: usize, colors: usize },
    #[error("requested {requested} points but only {available} available")]
    CountOutOfRange { requested: usize, available: usize },
    #[error("start index {start} out of range for {n} points")]
    StartOutOfRange { start: usize, n: usize },
    #[error("all points coincide; cannot normalize")]
    DegenerateCloud,
    #[error("view count must be at least 1")]
    ZeroViews,
    #[error("render resolution must be at least 1")]
    ZeroResolution,
    #[error("invalid augmentation: {0}")]
    InvalidAugment(String),
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
}

/// N points with optional per-point RGB in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    colors: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, colors: Option<Vec<[f32; 3]>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::NonFinitePoint(i));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(GeometryError::ColorCount { points: points.len(), colors: c.len() });
            }
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    pub fn has_color(&self) -> bool {
        self.colors.is_some()
    }

    /// Sub-cloud at `indices`, colors following their points.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += f64::from(p[k]);
            }
        }
        c.map(|v| v / self.points.len() as f64)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm3).fold(0.0, f64::max)
    }

    pub(crate) fn points_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.points
    }
}

pub(crate) fn norm3(p: &[f32; 3]) -> f64 {
    p.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt()
}
