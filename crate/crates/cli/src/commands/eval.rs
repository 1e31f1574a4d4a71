use std::fmt::Write as _;
use std::path::PathBuf;

use serde_json::json;
use trialign::embedstore::write_table;
use trialign::embedstore::EmbeddingTable;
use trialign::eval::{
    compute_metrics, fit_classifier, zero_shot_classify, EvalError, LabelEmbeddings, ProbeInput, ProbeMode,
    REPORT_CSV_HEADER,
};
use trialign::training::{load_checkpoint, Checkpoint};

use super::{create_dir, embed_all, eval_clouds, load_clouds, manifest_labels, manifest_path, run_config, write_out};
use crate::config::{require_file, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{EmbedArgs, EvalArgs, ProbeArgs};

struct EvalInputs {
    cfg: RunConfig,
    ckpt: Checkpoint,
    /// Manifest of the evaluated split.
    manifest: PathBuf,
}

/// The evaluated split is `--manifest`, else the config's eval manifest.
fn eval_inputs(a: &EvalArgs) -> CliResult<EvalInputs> {
    let cfg = run_config(&a.data)?;
    let manifest = manifest_path(&a.data.manifest.clone().or_else(|| cfg.eval.manifest.clone()), "eval manifest")?;
    let ckpt = load_checkpoint(require_file(&Some(a.checkpoint.clone()), "checkpoint")?)?;
    Ok(EvalInputs { cfg, ckpt, manifest })
}

fn label_names(a: &EvalArgs, cfg: &RunConfig) -> CliResult<Option<PathBuf>> {
    match a.names.clone().or_else(|| cfg.eval.label_names.clone()) {
        Some(p) => require_file(&Some(p), "label names").map(Some),
        None => Ok(None),
    }
}

pub fn eval_zeroshot(a: EvalArgs) -> CliResult<()> {
    let EvalInputs { cfg, ckpt, manifest: manifest_file } = eval_inputs(&a)?;
    let labels_path = require_file(&a.labels.clone().or_else(|| cfg.eval.labels.clone()), "label table")?;
    let labels = LabelEmbeddings::load(&labels_path, label_names(&a, &cfg)?.as_deref())?;
    let (manifest, clouds) = load_clouds(&manifest_file)?;
    let truth = manifest_labels(&manifest)?;
    let clouds = eval_clouds(&manifest, &clouds, &ckpt.config.train)?;
    let features = embed_all(&ckpt.params, &ckpt.config.model, &clouds)?;
    let preds = zero_shot_classify(&features, &labels)?;
    let report = compute_metrics(&preds, &truth, labels.count())?;

    let mut tsv = String::from("shape_id\ttruth\tranked\n");
    for ((shape, t), p) in manifest.shapes.iter().zip(&truth).zip(&preds) {
        let ranked: Vec<&str> = p.iter().map(|&c| labels.names[c].as_str()).collect();
        writeln!(tsv, "{}\t{}\t{}", shape.shape_id, labels.names[*t], ranked.join(",")).unwrap();
    }
    let out = &cfg.output.dir;
    create_dir(out)?;
    write_out(out, "zeroshot.json", report.to_json())?;
    write_out(out, "zeroshot.csv", format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row()))?;
    write_out(out, "confusion.csv", report.confusion_csv(&labels.names))?;
    write_out(out, "predictions.tsv", tsv)?;
    println!(
        "zero-shot over {} shapes: top1 {:.4} top5 {:.4} class-average {:.4}",
        report.samples, report.top1, report.top5, report.class_average_accuracy
    );
    Ok(())
}

pub fn eval_probe(a: ProbeArgs, seed: Option<u64>) -> CliResult<()> {
    let EvalInputs { cfg, ckpt, manifest: test_file } = eval_inputs(&a.eval)?;
    let train_file = manifest_path(&a.train_manifest.clone().or_else(|| cfg.data.manifest.clone()), "train manifest")?;
    let mut probe = cfg.eval.probe.clone();
    if let Some(m) = &a.mode {
        probe.mode = serde_json::from_value(json!(m))
            .map_err(|_| CliError::Usage(format!("unknown probe mode `{m}` (linear_probe or finetune)")))?;
    }
    if let Some(s) = a.steps {
        probe.steps = s;
    }
    if let Some(s) = seed {
        probe.seed = s;
    }

    let (train_manifest, train_clouds) = load_clouds(&train_file)?;
    let (test_manifest, test_clouds) = load_clouds(&test_file)?;
    let train_labels = manifest_labels(&train_manifest)?;
    let test_labels = manifest_labels(&test_manifest)?;
    let names = match label_names(&a.eval, &cfg)? {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            text.lines().map(str::to_owned).collect()
        }
        None => {
            let classes = train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);
            (0..classes).map(|c| format!("class_{c}")).collect::<Vec<_>>()
        }
    };
    let train = &ckpt.config.train;
    let train_clouds = eval_clouds(&train_manifest, &train_clouds, train)?;
    let test_clouds = eval_clouds(&test_manifest, &test_clouds, train)?;
    let input = ProbeInput::Encoder {
        params: &ckpt.params,
        config: &ckpt.config.model,
        train: &train_clouds,
        test: &test_clouds,
    };
    let outcome = fit_classifier(input, &train_labels, &test_labels, names.len(), &probe).map_err(|e| match e {
        EvalError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;

    let mode = match probe.mode {
        ProbeMode::LinearProbe => "linear_probe",
        ProbeMode::Finetune => "finetune",
    };
    let doc = json!({
        "mode": mode,
        "config": probe,
        "train": outcome.train_report,
        "test": outcome.test_report,
    });
    let mut losses = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        writeln!(losses, "{},{l}", i + 1).unwrap();
    }
    let out = &cfg.output.dir;
    create_dir(out)?;
    write_out(out, "probe.json", serde_json::to_string_pretty(&doc).expect("report serializes") + "\n")?;
    write_out(
        out,
        "probe.csv",
        format!(
            "split,{REPORT_CSV_HEADER}\ntrain,{}\ntest,{}\n",
            outcome.train_report.csv_row(),
            outcome.test_report.csv_row()
        ),
    )?;
    write_out(out, "probe_confusion.csv", outcome.test_report.confusion_csv(&names))?;
    write_out(out, "probe_losses.csv", losses)?;
    println!(
        "{mode}: train top1 {:.4}, test top1 {:.4} class-average {:.4}",
        outcome.train_report.top1, outcome.test_report.top1, outcome.test_report.class_average_accuracy
    );
    Ok(())
}

/// The embedded split is `--manifest`, else the config's eval manifest,
/// else its training manifest.
pub fn embed_manifest(a: EmbedArgs) -> CliResult<()> {
    let cfg = run_config(&a.data)?;
    let ckpt = load_checkpoint(require_file(&Some(a.checkpoint.clone()), "checkpoint")?)?;
    let chosen = a.data.manifest.clone().or_else(|| cfg.eval.manifest.clone()).or_else(|| cfg.data.manifest.clone());
    let (manifest, clouds) = load_clouds(&manifest_path(&chosen, "manifest")?)?;
    let clouds = eval_clouds(&manifest, &clouds, &ckpt.config.train)?;
    let features = embed_all(&ckpt.params, &ckpt.config.model, &clouds)?;
    let table = EmbeddingTable::new(ckpt.config.model.embed_dim, features.data().to_vec(), "point-cloud encoder")?;
    let out = &cfg.output.dir;
    create_dir(out)?;
    write_table(&table, out.join("embeddings.ulp2"))?;
    let ids: String = manifest.shapes.iter().map(|s| format!("{}\n", s.shape_id)).collect();
    write_out(out, "embeddings_ids.txt", ids)?;
    println!("wrote {} embeddings of dim {} to {}", table.count(), table.dim(), out.display());
    Ok(())
}
