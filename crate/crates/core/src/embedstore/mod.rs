//! Frozen-space embedding tables, the triplet manifest, and caption ranking.

mod captions;
mod manifest;
mod ranking;
mod table;

use std::path::PathBuf;

use thiserror::Error;

use crate::format::FormatError;

pub use captions::{format_captions, group_captions, parse_captions, read_captions, CaptionLine};
pub use manifest::{load_manifest, save_manifest, ShapeRecord, TripletManifest, ViewRecord};
pub use ranking::{clip_score, rank_captions, select_topk};
pub use table::{decode_table, encode_table, read_table, write_table, EmbeddingTable, NORM_TOLERANCE};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("row {row} has norm {norm}, outside 1 ± {NORM_TOLERANCE}")]
    RowNorm { row: usize, norm: f64 },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("shape `{shape_id}` has no views")]
    NoViews { shape_id: String },
    #[error("shape `{shape_id}` view {view_index} has no caption rows")]
    EmptyCaptions { shape_id: String, view_index: usize },
    #[error("shape `{shape_id}` view {view_index}: {table} row {row} out of range ({count} rows)")]
    DanglingRow { shape_id: String, view_index: usize, table: &'static str, row: usize, count: usize },
    #[error("top-k {k} out of range for {available} captions")]
    TopKOutOfRange { k: usize, available: usize },
    #[error("caption line {line}: {msg}")]
    CaptionLine { line: usize, msg: String },
    #[error("aggregated caption embedding has near-zero norm {0:e}")]
    DegenerateMean(f64),
}
