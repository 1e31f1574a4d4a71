use std::fs;
use std::path::PathBuf;

use trialign::model::EncoderConfig;
use trialign::synth::{Primitive, SynthBundle, SynthSpec};
use trialign::training::TrainConfig;

use super::{create_dir, write_out};
use crate::config::{DataSection, EvalSection, OutputSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::BuildSynthArgs;

fn load_spec(a: &BuildSynthArgs, seed: Option<u64>) -> CliResult<SynthSpec> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(names) = &a.categories {
        spec.categories =
            names.iter().map(|n| n.parse::<Primitive>()).collect::<Result<_, _>>().map_err(CliError::Usage)?;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                spec.$field = v;
            }
        )*};
    }
    set!(
        train_per_class,
        test_per_class,
        points,
        views,
        captions_per_view,
        embed_dim,
        sigma_shape,
        sigma_image,
        sigma_text,
        wrong_captions,
        view_ambiguity
    );
    spec.color |= a.color;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// A config that trains on the generated train split and evaluates on the
/// test split, with paths relative to the output directory.
fn starter_config(spec: &SynthSpec) -> RunConfig {
    let mut model = EncoderConfig::with_dim(spec.embed_dim);
    model.in_channels = if spec.color { 6 } else { 3 };
    RunConfig {
        data: DataSection {
            manifest: Some("train_manifest.json".into()),
            image_table: Some("image.ulp2".into()),
            text_table: Some("text.ulp2".into()),
            point_budget: None,
            channels: None,
        },
        model,
        train: TrainConfig { seed: spec.seed, point_budget: spec.points, ..TrainConfig::default() },
        eval: EvalSection {
            manifest: Some("test_manifest.json".into()),
            labels: Some("labels.ulp2".into()),
            label_names: Some("labels.txt".into()),
            probe: Default::default(),
        },
        output: OutputSection { dir: PathBuf::from("run") },
    }
}

pub fn build_synth(a: BuildSynthArgs, seed: Option<u64>) -> CliResult<()> {
    let spec = load_spec(&a, seed)?;
    if a.render == Some(0) {
        return Err(CliError::Usage("--render must be at least 1".into()));
    }
    create_dir(&a.out)?;
    let bundle = SynthBundle::build(&spec)?;
    for w in &bundle.mock.warnings {
        eprintln!("warning: {w}");
    }
    let written = bundle.write(&a.out, a.render)?;
    write_out(&a.out, "run.json", starter_config(&spec).to_json())?;
    println!(
        "wrote {} shapes ({} train, {} test) and {} files to {}",
        bundle.dataset.shapes.len(),
        bundle.mock.train.shapes.len(),
        bundle.mock.test.shapes.len(),
        written.len() + 1,
        a.out.display()
    );
    Ok(())
}
