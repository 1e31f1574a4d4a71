//! Permutation-invariant point-cloud encoder.
//!
//! A shared per-point MLP lifts every point to a feature vector, a
//! coordinate-wise max pools the cloud, and a small head projects the pooled
//! feature into the frozen embedding space, followed by row normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ag::{AgError, Element, Graph, NamedTensor, Tensor, Var};
use crate::geometry::PointCloud;

/// Fill value for missing color channels on 6-channel encoders.
pub const DEFAULT_COLOR: f32 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("input has {found} channels, encoder expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("cloud {0} in batch is empty")]
    EmptyCloud(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameters do not match config: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Ag(#[from] AgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// 3 for xyz, 6 for xyzrgb.
    pub in_channels: usize,
    pub point_mlp_widths: Vec<usize>,
    /// The last width is the output embedding dimension.
    pub head_widths: Vec<usize>,
    pub embed_dim: usize,
    /// Row-wise layer norm before each hidden activation.
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::with_dim(512)
    }
}

impl EncoderConfig {
    pub fn with_dim(embed_dim: usize) -> Self {
        Self {
            in_channels: 3,
            point_mlp_widths: vec![64, 128, 256],
            head_widths: vec![256, embed_dim],
            embed_dim,
            layer_norm: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels != 3 && self.in_channels != 6 {
            return Err(ModelError::InvalidConfig(format!("in_channels must be 3 or 6, got {}", self.in_channels)));
        }
        if self.point_mlp_widths.is_empty() || self.head_widths.is_empty() {
            return Err(ModelError::InvalidConfig("point and head MLPs need at least one layer".into()));
        }
        if self.point_mlp_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return Err(ModelError::InvalidConfig("layer widths must be positive".into()));
        }
        if self.head_widths.last() != Some(&self.embed_dim) {
            return Err(ModelError::InvalidConfig(format!(
                "last head width {:?} must equal embed_dim {}",
                self.head_widths.last(),
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every linear layer in order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.in_channels;
        for (i, &w) in self.point_mlp_widths.iter().enumerate() {
            out.push((format!("point.{i}"), fan_in, w));
            fan_in = w;
        }
        for (i, &w) in self.head_widths.iter().enumerate() {
            out.push((format!("head.{i}"), fan_in, w));
            fan_in = w;
        }
        out
    }
}

/// Weights (`fan_in × fan_out`) and biases (`1 × fan_out`) of every layer,
/// interleaved in forward order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub tensors: Vec<NamedTensor>,
}

impl EncoderParams {
    pub fn check(&self, config: &EncoderConfig) -> Result<(), ModelError> {
        let layers = config.layers();
        if self.tensors.len() != layers.len() * 2 {
            return Err(ModelError::ParamMismatch(format!(
                "{} tensors for {} layers",
                self.tensors.len(),
                layers.len()
            )));
        }
        for (k, (name, fan_in, fan_out)) in layers.iter().enumerate() {
            let (w, b) = (&self.tensors[2 * k], &self.tensors[2 * k + 1]);
            if w.name != format!("{name}.weight") || w.tensor.shape() != [*fan_in, *fan_out] {
                return Err(ModelError::ParamMismatch(format!("{} {:?}", w.name, w.tensor.shape())));
            }
            if b.name != format!("{name}.bias") || b.tensor.shape() != [1, *fan_out] {
                return Err(ModelError::ParamMismatch(format!("{} {:?}", b.name, b.tensor.shape())));
            }
        }
        if let Some(t) = self.tensors.iter().find(|t| !t.tensor.is_finite()) {
            return Err(ModelError::ParamMismatch(format!("{} has non-finite values", t.name)));
        }
        Ok(())
    }

    /// Adds every tensor to `graph` as a trainable leaf.
    pub fn register<T: Element>(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.param(t.tensor.cast())).collect()
    }

    /// Adds every tensor to `graph` as a constant.
    pub fn register_frozen<T: Element>(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.constant(t.tensor.cast())).collect()
    }
}

/// He-uniform weights in `±√(6 / fan_in)` and zero biases.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, fan_in, fan_out) in config.layers() {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        tensors.push(NamedTensor::new(format!("{name}.weight"), Tensor::matrix(fan_in, fan_out, w)?));
        tensors.push(NamedTensor::new(format!("{name}.bias"), Tensor::zeros(&[1, fan_out])));
    }
    Ok(EncoderParams { tensors })
}

/// N×C input matrix for one cloud. Three-channel encoders read xyz only;
/// six-channel encoders append rgb, or [`DEFAULT_COLOR`] when absent.
pub fn cloud_matrix<T: Element>(config: &EncoderConfig, pc: &PointCloud) -> Tensor<T> {
    let c = config.in_channels;
    let mut data = Vec::with_capacity(pc.len() * c);
    for (i, p) in pc.points().iter().enumerate() {
        data.extend(p.iter().map(|v| T::from_f64(f64::from(*v))));
        if c == 6 {
            let rgb = pc.colors().map_or([DEFAULT_COLOR; 3], |cols| cols[i]);
            data.extend(rgb.iter().map(|v| T::from_f64(f64::from(*v))));
        }
    }
    Tensor::from_parts(vec![pc.len(), c], data)
}

fn linear<T: Element>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, AgError> {
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

fn mlp<T: Element>(
    g: &mut Graph<T>,
    mut x: Var,
    layers: &[Var],
    layer_norm: bool,
    activate_last: bool,
) -> Result<Var, AgError> {
    let n = layers.len() / 2;
    for k in 0..n {
        x = linear(g, x, layers[2 * k], layers[2 * k + 1])?;
        if k + 1 < n || activate_last {
            if layer_norm {
                x = g.layer_norm_rows(x)?;
            }
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

/// Encodes raw `N × in_channels` input matrices; returns a `B × D` node with
/// unit rows.
pub fn encode_matrices<T: Element>(
    g: &mut Graph<T>,
    params: &[Var],
    config: &EncoderConfig,
    inputs: Vec<Tensor<T>>,
) -> Result<Var, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let split = config.point_mlp_widths.len() * 2;
    if params.len() != split + config.head_widths.len() * 2 {
        return Err(ModelError::ParamMismatch(format!("{} parameter nodes", params.len())));
    }
    let (point_layers, head_layers) = params.split_at(split);
    let mut pooled = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.rank() != 2 || x.cols() != config.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: config.in_channels,
                found: *x.shape().last().unwrap_or(&0),
            });
        }
        let x = g.constant(x);
        let h = mlp(g, x, point_layers, config.layer_norm, false)?;
        pooled.push(g.max_over_axis(h, 0)?);
    }
    let feats = g.concat_rows(&pooled)?;
    let out = mlp(g, feats, head_layers, config.layer_norm, false)?;
    Ok(g.l2_normalize_rows(out)?)
}

/// Differentiable encoding of a batch of clouds.
pub fn encode<T: Element>(
    g: &mut Graph<T>,
    params: &[Var],
    config: &EncoderConfig,
    batch: &[PointCloud],
) -> Result<Var, ModelError> {
    if let Some(i) = batch.iter().position(PointCloud::is_empty) {
        return Err(ModelError::EmptyCloud(i));
    }
    let inputs = batch.iter().map(|pc| cloud_matrix(config, pc)).collect();
    encode_matrices(g, params, config, inputs)
}

/// Forward-only encoding in f32, returning the `B × D` embedding matrix.
pub fn embed(params: &EncoderParams, config: &EncoderConfig, batch: &[PointCloud]) -> Result<Tensor<f32>, ModelError> {
    let mut g = Graph::<f32>::new();
    let vars = params.register_frozen(&mut g);
    let out = encode(&mut g, &vars, config, batch)?;
    Ok(g.value(out).clone())
}
