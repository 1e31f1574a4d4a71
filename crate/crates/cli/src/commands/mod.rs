mod data;
mod eval;
mod gradcheck;
mod synth;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use trialign::ag::Tensor;
use trialign::embedstore::{load_manifest, TripletManifest};
use trialign::geometry::{read_point_cloud, AugmentSpec, PointCloud};
use trialign::model::{embed, EncoderConfig, EncoderParams};
use trialign::training::{prepare_cloud, SampleSpec, TrainConfig, TrainError};

use crate::config::{require_file, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{Cli, Command, DataFlags};

pub fn run(cli: Cli) -> CliResult<()> {
    let Cli { seed, workers, command } = cli;
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    match command {
        Command::BuildSynth(a) => synth::build_synth(a, seed),
        Command::SamplePoints(a) => data::sample_points(a, seed),
        Command::RankCaptions(a) => data::rank_captions(a),
        Command::Train(a) => train::train(a, seed, workers),
        Command::EvalZeroshot(a) => eval::eval_zeroshot(a),
        Command::EvalProbe(a) => eval::eval_probe(a, seed),
        Command::Embed(a) => eval::embed_manifest(a),
        Command::GradCheck(a) => gradcheck::grad_check(a, seed),
        Command::Info(a) => data::info(a),
    }
}

/// Loads the config named by `--config` (if any) and applies the shared
/// path flags on top.
fn run_config(flags: &DataFlags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load_or_default(flags.config.as_deref())?;
    if let Some(m) = &flags.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(p) = &flags.image {
        cfg.data.image_table = Some(p.clone());
    }
    if let Some(p) = &flags.text {
        cfg.data.text_table = Some(p.clone());
    }
    if let Some(o) = &flags.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_out(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// A manifest and its clouds, read relative to the manifest's directory.
fn load_clouds(manifest_path: &Path) -> CliResult<(TripletManifest, Vec<PointCloud>)> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let clouds = manifest
        .shapes
        .iter()
        .map(|s| {
            read_point_cloud(manifest.cloud_path(base, s))
                .map_err(|source| TrainError::Geometry { shape_id: s.shape_id.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, clouds))
}

fn manifest_labels(manifest: &TripletManifest) -> CliResult<Vec<usize>> {
    manifest
        .shapes
        .iter()
        .map(|s| s.label.ok_or_else(|| CliError::Data(format!("shape `{}` has no label", s.shape_id))))
        .collect()
}

/// Reduces clouds to the training point budget the same way every time
/// (no augmentation, FPS from index 0).
fn eval_clouds(manifest: &TripletManifest, clouds: &[PointCloud], train: &TrainConfig) -> CliResult<Vec<PointCloud>> {
    let spec = SampleSpec {
        batch_size: 1,
        point_budget: train.point_budget,
        subsample: train.subsample,
        augment: AugmentSpec::default(),
        caption_topk: 1,
    };
    manifest
        .shapes
        .iter()
        .zip(clouds)
        .map(|(s, pc)| {
            prepare_cloud(pc, &spec, 0)
                .map_err(|source| TrainError::Geometry { shape_id: s.shape_id.clone(), source }.into())
        })
        .collect()
}

const EMBED_CHUNK: usize = 16;

fn embed_all(params: &EncoderParams, model: &EncoderConfig, clouds: &[PointCloud]) -> CliResult<Tensor<f32>> {
    let mut rows = Vec::with_capacity(clouds.len() * model.embed_dim);
    for chunk in clouds.chunks(EMBED_CHUNK) {
        rows.extend_from_slice(embed(params, model, chunk)?.data());
    }
    Tensor::matrix(clouds.len(), model.embed_dim, rows).map_err(CliError::data)
}

fn manifest_path(explicit: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    require_file(explicit, what)
}
