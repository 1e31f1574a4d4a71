use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trialign(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trialign")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

const SMALL: &[&str] = &[
    "--categories",
    "sphere,cube,cone",
    "--train-per-class",
    "4",
    "--test-per-class",
    "2",
    "--points",
    "128",
    "--views",
    "4",
    "--captions-per-view",
    "3",
    "--embed-dim",
    "16",
];

fn build_small(cwd: &Path, out: &str, seed: &str) {
    let mut args = vec!["--seed", seed, "build-synth", "--out", out];
    args.extend_from_slice(SMALL);
    let o = trialign(&args, cwd);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn train_args<'a>(config: &'a str, out: &'a str, steps: &'a str) -> Vec<&'a str> {
    vec!["train", "--config", config, "--out", out, "--steps", steps, "--batch-size", "6", "--log-every", "0"]
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = trialign(&["grad-check", "--out", "gc"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("gc/gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(csv.contains("encode+loss,"));
}

#[test]
fn missing_manifest_is_a_data_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        trialign(&["train", "--manifest", "absent/manifest.json", "--image", "i.ulp2", "--text", "t.ulp2"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent/manifest.json"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&trialign(&["train", "--no-such-flag"], dir.path())), 1);
    fs::write(dir.path().join("bad.json"), r#"{"train": {"stpes": 3}}"#).unwrap();
    assert_eq!(code(&trialign(&["train", "--config", "bad.json"], dir.path())), 1);
    assert_eq!(code(&trialign(&["build-synth", "--out", "x", "--categories", "blob"], dir.path())), 1);
}

#[test]
fn build_synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    build_small(dir.path(), "a", "7");
    build_small(dir.path(), "b", "7");
    build_small(dir.path(), "c", "8");
    let a = tree(&dir.path().join("a"));
    assert!(a.contains_key(Path::new("run.json")));
    assert!(a.contains_key(Path::new("clouds/sphere_000.upc")));
    assert_eq!(a, tree(&dir.path().join("b")));
    assert_ne!(a, tree(&dir.path().join("c")));
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    build_small(d, "data", "3");

    let o = trialign(&train_args("data/run.json", "full", "12"), d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = fs::read(d.join("full/checkpoint.uckp")).unwrap();
    let log = fs::read_to_string(d.join("full/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);

    let mut two = train_args("data/run.json", "workers", "12");
    two.extend(["--workers", "2"]);
    assert_eq!(code(&trialign(&two, d)), 0);
    assert_eq!(ckpt, fs::read(d.join("workers/checkpoint.uckp")).unwrap());

    assert_eq!(code(&trialign(&train_args("data/run.json", "split", "5"), d)), 0);
    let resume =
        ["train", "--config", "data/run.json", "--out", "split", "--resume", "split/checkpoint.uckp", "--steps", "12"];
    let o = trialign(&resume, d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(ckpt, fs::read(d.join("split/checkpoint.uckp")).unwrap());

    let o = trialign(
        &["eval-zeroshot", "--config", "data/run.json", "--checkpoint", "full/checkpoint.uckp", "--out", "zs"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["zeroshot.json", "zeroshot.csv", "confusion.csv", "predictions.tsv"] {
        assert!(d.join("zs").join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("zs/zeroshot.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 6);

    let probe = [
        "eval-probe",
        "--config",
        "data/run.json",
        "--checkpoint",
        "full/checkpoint.uckp",
        "--out",
        "pr",
        "--steps",
        "20",
    ];
    let o = trialign(&probe, d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.join("pr/probe_losses.csv")).unwrap().lines().count(), 21);

    let o =
        trialign(&["embed", "--config", "data/run.json", "--checkpoint", "full/checkpoint.uckp", "--out", "emb"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = trialign(&["info", "emb/embeddings.ulp2"], d);
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 rows of dim 16"));
}

#[test]
fn divergence_exits_three_with_last_good_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    build_small(d, "data", "1");
    let mut args = train_args("data/run.json", "run", "10");
    args.extend(["--lr", "1e30"]);
    let o = trialign(&args, d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("step"));
    assert!(d.join("run/last_good.uckp").is_file());
    assert_eq!(code(&trialign(&["info", "run/last_good.uckp"], d)), 0);
}

#[test]
fn rank_captions_annotates_text_and_checks_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    build_small(d, "data", "2");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("data/train_manifest.json")).unwrap()).unwrap();
    let mut captions = String::new();
    for shape in manifest["shapes"].as_array().unwrap() {
        for view in shape["views"].as_array().unwrap() {
            for (i, row) in view["caption_rows"].as_array().unwrap().iter().enumerate() {
                captions.push_str(&format!(
                    "{}\t{}\tcaption {i} row {row}\n",
                    shape["shape_id"].as_str().unwrap(),
                    view["view_index"]
                ));
            }
        }
    }
    fs::write(d.join("caps.txt"), &captions).unwrap();
    let args = ["rank-captions", "--config", "data/run.json", "--captions", "caps.txt", "--topk", "2", "--out", "rk"];
    let o = trialign(&args, d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = fs::read_to_string(d.join("rk/ranked_captions.tsv")).unwrap();
    for line in tsv.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        assert!(f[5].ends_with(&format!("row {}", f[3])), "{line}");
    }
    assert!(d.join("rk/text_top2.ulp2").is_file());

    let short: String = captions.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(d.join("caps.txt"), short).unwrap();
    let o = trialign(&args, d);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("view 0"), "{}", stderr(&o));
}

#[test]
fn every_command_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    build_small(d, "data", "4");
    fs::write(d.join("tri.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n").unwrap();
    for run in ["r1", "r2"] {
        let ok = |args: &[&str]| {
            let o = trialign(args, d);
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        };
        let out = |sub: &str| format!("{run}/{sub}");
        ok(&train_args("data/run.json", &out("train"), "6"));
        let ckpt = out("train/checkpoint.uckp");
        ok(&["eval-zeroshot", "--config", "data/run.json", "--checkpoint", &ckpt, "--out", &out("zs")]);
        ok(&["eval-probe", "--config", "data/run.json", "--checkpoint", &ckpt, "--out", &out("pr"), "--steps", "5"]);
        let ft =
            ["eval-probe", "--config", "data/run.json", "--checkpoint", &ckpt, "--out", &out("ft"), "--steps", "3"];
        ok(&[&ft[..], &["--mode", "finetune"]].concat());
        ok(&["embed", "--config", "data/run.json", "--checkpoint", &ckpt, "--out", &out("emb")]);
        ok(&["rank-captions", "--config", "data/run.json", "--topk", "2", "--out", &out("rk")]);
        ok(&[
            "--seed",
            "5",
            "sample-points",
            "--mesh",
            "tri.obj",
            "--points",
            "300",
            "--fps",
            "64",
            "--render-views",
            "3",
            "--out",
            &out("sp"),
        ]);
        ok(&["grad-check", "--out", &out("gc")]);
    }
    let strip = |mut t: BTreeMap<PathBuf, Vec<u8>>| {
        t.remove(Path::new("train/run.log"));
        // the recorded config names the output directory, which differs by design
        let cfg = t.get_mut(Path::new("train/config.json")).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(cfg).unwrap();
        doc.as_object_mut().unwrap().remove("output");
        *cfg = doc.to_string().into_bytes();
        t
    };
    let (a, b) = (strip(tree(&d.join("r1"))), strip(tree(&d.join("r2"))));
    assert!(a.contains_key(Path::new("ft/probe.json")) && a.contains_key(Path::new("sp/tri.upc")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs", k.display());
    }
}
