use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use trialign::training::{
    load_checkpoint, save_checkpoint, write_loss_log, LossRecord, TrainError, Trainer, TrainingData,
};

use super::{create_dir, run_config, write_out};
use crate::config::require_file;
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

fn save_log(dir: &Path, records: &[LossRecord]) -> CliResult<()> {
    let path = dir.join("loss.csv");
    let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    write_loss_log(BufWriter::new(file), records).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn train(a: TrainArgs, seed: Option<u64>, workers: usize) -> CliResult<()> {
    let mut cfg = run_config(&a.data)?;
    cfg.resolve();
    let manifest = require_file(&cfg.data.manifest, "manifest")?;
    let image = require_file(&cfg.data.image_table, "image table")?;
    let text = require_file(&cfg.data.text_table, "text table")?;

    let resume = match &a.resume {
        Some(p) => {
            if a.batch_size.is_some() || a.lr.is_some() || a.point_budget.is_some() || a.caption_topk.is_some() {
                return Err(CliError::Usage(
                    "--resume keeps the checkpoint's settings; only --steps may change".into(),
                ));
            }
            let mut ck = load_checkpoint(require_file(&Some(p.clone()), "checkpoint")?)?;
            if let Some(s) = a.steps {
                ck.config.train.steps = s;
            }
            cfg.model = ck.config.model.clone();
            cfg.train = ck.config.train.clone();
            Some(ck)
        }
        None => {
            let t = &mut cfg.train;
            if let Some(v) = a.steps {
                t.steps = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = a.lr {
                t.lr = v;
            }
            if let Some(v) = a.point_budget {
                t.point_budget = v;
            }
            if let Some(v) = a.caption_topk {
                t.caption_topk = v;
            }
            if let Some(s) = seed {
                t.seed = s;
            }
            None
        }
    };
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let data = TrainingData::load(&manifest, &image, &text)?;
    let out = cfg.output.dir.clone();
    create_dir(&out)?;
    write_out(&out, "config.json", cfg.to_json())?;

    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(&data, ck)?,
        None => Trainer::new(&data, &cfg.model, &cfg.train)?,
    }
    .with_workers(workers);
    let start_step = trainer.step_count();
    let total = cfg.train.steps;
    eprintln!("training {} shapes from step {start_step} to {total}", data.len());
    let started = Instant::now();
    let mut records = Vec::new();
    let result = trainer.run(|r| {
        records.push(*r);
        if a.log_every > 0 && (r.step % a.log_every == 0 || r.step + 1 == total) {
            eprintln!(
                "step {:>6}  loss {:.5}  p2i {:.5}  p2t {:.5}  tau {:.5}",
                r.step, r.loss_total, r.loss_p2i, r.loss_p2t, r.tau
            );
        }
    });
    save_log(&out, &records)?;
    let elapsed = started.elapsed().as_secs_f64();

    match result {
        Ok(_) => {
            let digest = save_checkpoint(&trainer.checkpoint(), out.join("checkpoint.uckp"))?;
            write_out(
                &out,
                "run.log",
                format!("steps {start_step}..{total}\nworkers {workers}\nseconds {elapsed:.3}\ndigest {digest}\n"),
            )?;
            println!("checkpoint {} sha256 {digest}", out.join("checkpoint.uckp").display());
            Ok(())
        }
        Err(TrainError::NonFinite { step, detail, last_good }) => {
            let path = out.join("last_good.uckp");
            save_checkpoint(&last_good, &path)?;
            Err(CliError::Numeric(format!(
                "non-finite value at step {step}: {detail}; last good state (step {}) saved to {}",
                last_good.step,
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}
