use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use trialign::embedstore::{
    clip_score, group_captions, load_manifest, rank_captions as rank_view, read_captions, read_table, select_topk,
    write_table, EmbeddingTable,
};
use trialign::geometry::{
    farthest_point_sample, load_mesh, make_viewpoints, normalize_unit_sphere, read_point_cloud, render_pointsplat,
    sample_surface, write_point_cloud, DEFAULT_ELEVATION_DEG,
};
use trialign::training::load_checkpoint;

use super::{create_dir, run_config, write_out};
use crate::config::require_file;
use crate::error::{CliError, CliResult};
use crate::{InfoArgs, RankCaptionsArgs, SamplePointsArgs};

pub fn sample_points(a: SamplePointsArgs, seed: Option<u64>) -> CliResult<()> {
    if !a.mesh.is_file() {
        return Err(CliError::Data(format!("mesh {} does not exist", a.mesh.display())));
    }
    let mesh = load_mesh(&a.mesh).map_err(|e| CliError::Data(format!("{}: {e}", a.mesh.display())))?;
    let mut pc = sample_surface(&mesh, a.points, seed.unwrap_or(0))?;
    if !a.no_normalize {
        pc = normalize_unit_sphere(&pc)?;
    }
    if let Some(m) = a.fps {
        pc = pc.select(&farthest_point_sample(&pc, m, 0)?);
    }
    create_dir(&a.out)?;
    let stem = a.mesh.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string();
    let path = a.out.join(format!("{stem}.upc"));
    write_point_cloud(&pc, &path)?;
    if let Some(k) = a.render_views {
        for view in make_viewpoints(k, DEFAULT_ELEVATION_DEG)? {
            let img = render_pointsplat(&pc, &view, a.render_res)?;
            write_out(&a.out, &format!("{stem}_v{:02}.pgm", view.index), img.to_pgm())?;
        }
    }
    println!("wrote {} points to {}", pc.len(), path.display());
    Ok(())
}

pub fn rank_captions(a: RankCaptionsArgs) -> CliResult<()> {
    if a.topk == 0 {
        return Err(CliError::Usage("--topk must be at least 1".into()));
    }
    let cfg = run_config(&a.data)?;
    let manifest_path = require_file(&cfg.data.manifest, "manifest")?;
    let image = read_table(require_file(&cfg.data.image_table, "image table")?)?;
    let text = read_table(require_file(&cfg.data.text_table, "text table")?)?;
    let manifest = load_manifest(&manifest_path)?;
    manifest.validate(&image, &text)?;
    let captions = match &a.captions {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Data(format!("caption file {} does not exist", p.display())));
            }
            Some(group_captions(&read_captions(p)?))
        }
        None => None,
    };

    let mut tsv = String::from("shape_id\tview_index\trank\tcaption_row\tclip_score");
    tsv.push_str(if captions.is_some() { "\ttext\n" } else { "\n" });
    let mut index = String::from("row\tshape_id\tview_index\n");
    let mut rows = Vec::new();
    for shape in &manifest.shapes {
        for view in &shape.views {
            let texts = match &captions {
                Some(map) => {
                    let key = (shape.shape_id.clone(), view.view_index);
                    let t = map.get(&key).map(Vec::as_slice).unwrap_or_default();
                    if t.len() != view.caption_rows.len() {
                        return Err(CliError::Data(format!(
                            "shape `{}` view {}: {} caption lines for {} caption rows",
                            shape.shape_id,
                            view.view_index,
                            t.len(),
                            view.caption_rows.len()
                        )));
                    }
                    Some(t)
                }
                None => None,
            };
            let ranked = rank_view(view, &image, &text)?;
            for (rank, &row) in ranked.iter().enumerate() {
                let score = clip_score(image.row(view.image_row), text.row(row))?;
                write!(tsv, "{}\t{}\t{}\t{}\t{}", shape.shape_id, view.view_index, rank + 1, row, score).unwrap();
                if let Some(t) = texts {
                    let slot = view.caption_rows.iter().position(|&r| r == row).expect("ranked row is a caption row");
                    write!(tsv, "\t{}", t[slot]).unwrap();
                }
                tsv.push('\n');
            }
            if a.topk > view.caption_rows.len() {
                return Err(CliError::Data(format!(
                    "shape `{}` view {}: --topk {} exceeds its {} captions",
                    shape.shape_id,
                    view.view_index,
                    a.topk,
                    view.caption_rows.len()
                )));
            }
            writeln!(index, "{}\t{}\t{}", rows.len() / text.dim(), shape.shape_id, view.view_index).unwrap();
            rows.extend(select_topk(view, a.topk, &image, &text)?);
        }
    }
    create_dir(&cfg.output.dir)?;
    write_out(&cfg.output.dir, "ranked_captions.tsv", tsv)?;
    let table = EmbeddingTable::new(text.dim(), rows, format!("top-{} caption aggregate", a.topk))?;
    let name = format!("text_top{}", a.topk);
    write_table(&table, cfg.output.dir.join(format!("{name}.ulp2")))?;
    write_out(&cfg.output.dir, &format!("{name}_index.tsv"), index)?;
    println!("ranked captions of {} views into {}", table.count(), cfg.output.dir.display());
    Ok(())
}

fn describe(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let out = match bytes.get(..4) {
        Some(b"UPC1") => {
            let pc = read_point_cloud(path)?;
            let c = pc.centroid();
            format!(
                "point cloud: {} points, color {}, centroid ({:.4}, {:.4}, {:.4}), max norm {:.4}",
                pc.len(),
                pc.has_color(),
                c[0],
                c[1],
                c[2],
                pc.max_norm()
            )
        }
        Some(b"ULP2") => {
            let t = read_table(path)?;
            format!("embedding table: {} rows of dim {}", t.count(), t.dim())
        }
        Some(b"UCKP") => {
            let ck = load_checkpoint(path)?;
            let m = &ck.config.model;
            format!(
                "checkpoint: step {} of {}, tau {:.5}, in_channels {}, point widths {:?}, head widths {:?}, digest {}",
                ck.step,
                ck.config.train.steps,
                ck.logit_scale.tau(),
                m.in_channels,
                m.point_mlp_widths,
                m.head_widths,
                ck.digest()?
            )
        }
        _ if path.extension().is_some_and(|e| e == "json") => {
            let m = load_manifest(path)?;
            let views: usize = m.shapes.iter().map(|s| s.views.len()).sum();
            let labeled = m.shapes.iter().filter(|s| s.label.is_some()).count();
            format!("manifest: {} shapes ({labeled} labeled), {views} views", m.shapes.len())
        }
        _ => {
            let lines = read_captions(path)?;
            format!("captions: {} lines over {} views", lines.len(), group_captions(&lines).len())
        }
    };
    Ok(out)
}

pub fn info(a: InfoArgs) -> CliResult<()> {
    for p in &a.paths {
        println!("{}: {}", p.display(), describe(p)?);
    }
    Ok(())
}
