//! The run configuration document and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trialign::eval::ProbeConfig;
use trialign::model::EncoderConfig;
use trialign::training::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Training-split manifest.
    pub manifest: Option<PathBuf>,
    pub image_table: Option<PathBuf>,
    pub text_table: Option<PathBuf>,
    /// Overrides `train.point_budget`.
    pub point_budget: Option<usize>,
    /// Overrides `model.in_channels`.
    pub channels: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Manifest of the split being evaluated.
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// One category name per line, in label-table order.
    pub label_names: Option<PathBuf>,
    pub probe: ProbeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config document. Relative paths inside it are taken relative
    /// to the document's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.manifest,
            &mut cfg.data.image_table,
            &mut cfg.data.text_table,
            &mut cfg.eval.manifest,
            &mut cfg.eval.labels,
            &mut cfg.eval.label_names,
        ] {
            rebase(base, p);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Folds the data-section shortcuts into the model and train sections.
    pub fn resolve(&mut self) {
        if let Some(b) = self.data.point_budget {
            self.train.point_budget = b;
        }
        if let Some(c) = self.data.channels {
            self.model.in_channels = c;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Fails with a data error naming `what` when the path is unset or missing.
pub fn require_file(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.clone().ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config)")))?;
    if !p.is_file() {
        return Err(CliError::Data(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}
