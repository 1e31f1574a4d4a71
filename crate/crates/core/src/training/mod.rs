//! Tri-modal contrastive objective, batch sampling, the optimizer loop and
//! checkpoints.

mod batch;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

use crate::ag::AgError;
use crate::embedstore::EmbedError;
use crate::format::FormatError;
use crate::geometry::GeometryError;
use crate::model::ModelError;

pub use batch::{prepare_cloud, Batch, BatchSampler, SampleSpec, Subsample, TrainingData};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig, RngState};
pub use gradcheck::check_encode_loss;
pub use loss::{
    contrastive_loss, contrastive_loss_node, total_loss, total_loss_node, LogitScale, LossBreakdown, LossWeights,
    Reduction,
};
pub use trainer::{train, write_loss_log, LossRecord, TrainConfig, TrainOutcome, Trainer, LOSS_LOG_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Ag(#[from] AgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("shape `{shape_id}`: {source}")]
    Geometry { shape_id: String, source: GeometryError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: FormatError },
    #[error("{which} row {row} has norm {norm}, expected unit rows")]
    NonUnitRow { which: &'static str, row: usize, norm: f64 },
    #[error("feature shapes {0:?} and {1:?} do not pair up")]
    FeatureShape(Vec<usize>, Vec<usize>),
    #[error("embedding tables have dim {table}, encoder outputs {model}")]
    DimMismatch { table: usize, model: usize },
    #[error("shape `{0}` has no label")]
    MissingLabel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String, last_good: Box<Checkpoint> },
}
