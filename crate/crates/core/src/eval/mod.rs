//! Zero-shot classification against label embeddings, accuracy metrics, and
//! supervised probing.

mod metrics;
mod probe;
mod zeroshot;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ag::AgError;
use crate::embedstore::{read_table, EmbedError, EmbeddingTable};
use crate::model::ModelError;

pub use metrics::{compute_metrics, EvalReport, REPORT_CSV_HEADER};
pub use probe::{fit_classifier, LinearClassifier, ProbeConfig, ProbeInput, ProbeMode, ProbeOutcome};
pub use zeroshot::{similarity_scores, zero_shot_classify, TOP_K};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding dim {features} does not match label dim {labels}")]
    DimMismatch { features: usize, labels: usize },
    #[error("need at least 2 categories, got {0}")]
    TooFewClasses(usize),
    #[error("{0} category names for {1} label rows")]
    NameCount(usize, usize),
    #[error("empty evaluation input")]
    Empty,
    #[error("{predictions} predictions for {truth} ground-truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("label {label} at sample {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("training set contains a single class ({0})")]
    SingleClass(usize),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("non-finite classifier loss at step {0}")]
    NonFinite(u64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ag(#[from] AgError),
}

/// One unit-norm text embedding per category, row `c` for category id `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddings {
    pub names: Vec<String>,
    pub table: EmbeddingTable,
}

impl LabelEmbeddings {
    pub fn new(names: Vec<String>, table: EmbeddingTable) -> Result<Self, EvalError> {
        if table.count() < 2 {
            return Err(EvalError::TooFewClasses(table.count()));
        }
        if names.len() != table.count() {
            return Err(EvalError::NameCount(names.len(), table.count()));
        }
        Ok(Self { names, table })
    }

    /// Unnamed categories are called `class_<id>`.
    pub fn unnamed(table: EmbeddingTable) -> Result<Self, EvalError> {
        let names = (0..table.count()).map(|c| format!("class_{c}")).collect();
        Self::new(names, table)
    }

    /// Reads a ULP2 table and, if given, a names file with one name per line.
    pub fn load(table_path: &Path, names_path: Option<&Path>) -> Result<Self, EvalError> {
        let table = read_table(table_path)?;
        match names_path {
            None => Self::unnamed(table),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| EvalError::Io { path: p.to_path_buf(), source })?;
                Self::new(text.lines().map(str::to_owned).collect(), table)
            }
        }
    }

    pub fn count(&self) -> usize {
        self.table.count()
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }
}
