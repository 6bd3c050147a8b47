use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use euisnet::data::read_image;
use euisnet::metrics::parse_csv;
use euisnet::model::load_checkpoint;
use image::{GrayImage, Luma, Rgb, RgbImage};

fn euisnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_euisnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Prepared 32×32 synthetic dataset of `n` originals in `dir/prepared`.
fn prepared(dir: &Path, n: usize) -> PathBuf {
    let o = euisnet(
        dir,
        &[
            "prepare",
            "--synthetic",
            &n.to_string(),
            "--out",
            "prepared",
            "--set",
            "image_size=32",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("prepared/manifest.tsv")
}

fn run_dirs(base: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(base).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&euisnet(d, &["frobnicate"])), 2);
    assert_eq!(code(&euisnet(d, &["prepare", "--root", ".", "--layout", "weird"])), 2);
    assert_eq!(code(&euisnet(d, &["train", "--config", "absent.txt", "--dry-run"])), 2);
    assert_eq!(code(&euisnet(d, &["train"])), 2);
    assert_eq!(code(&euisnet(d, &["prepare"])), 2);
    assert_eq!(code(&euisnet(d, &["train", "--dry-run", "--set", "loss=hinge"])), 2);
    assert_eq!(code(&euisnet(d, &["--help"])), 0);
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.txt"),
        "seed = 3\nlearning_rate = 0.1\nbatchsize = 4\n",
    )
    .unwrap();
    let o = euisnet(dir.path(), &["train", "--config", "c.txt", "--dry-run"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("learning_rate") && err.contains("batchsize"), "{err}");
}

#[test]
fn dry_run_prints_resolved_config_and_size() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "seed = 3\nbase_width = 8\n").unwrap();
    let o = euisnet(
        dir.path(),
        &[
            "train",
            "--config",
            "c.txt",
            "--seed",
            "9",
            "--set",
            "max_epochs=7",
            "--dry-run",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("seed = 9\n") && out.contains("base_width = 8\n") && out.contains("max_epochs = 7\n"),
        "{out}"
    );
    assert!(out.contains("# parameters: "));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn prepare_reports_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "prepare",
        "--synthetic",
        "20",
        "--set",
        "image_size=32",
        "--seed",
        "4",
        "--out",
    ];
    let a = euisnet(d, &[&args[..], &["a"]].concat());
    let b = euisnet(d, &[&args[..], &["b"]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert!(stdout(&a).contains("original samples:  20"));
    assert!(stdout(&a).contains("after augmentation: 100"));
    assert_eq!(
        fs::read(d.join("a/manifest.tsv")).unwrap(),
        fs::read(d.join("b/manifest.tsv")).unwrap()
    );
    assert_eq!(code(&euisnet(d, &[&args[..], &["a"]].concat())), 2);
    assert_eq!(code(&euisnet(d, &[&args[..], &["a", "--force"]].concat())), 0);
}

#[test]
fn prepare_lists_images_without_masks() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    for name in ["one", "two", "three"] {
        RgbImage::from_pixel(8, 8, Rgb([10, 20, 30]))
            .save(root.join(format!("images/{name}.png")))
            .unwrap();
    }
    GrayImage::from_pixel(8, 8, Luma([255]))
        .save(root.join("masks/two.png"))
        .unwrap();
    let o = euisnet(
        dir.path(),
        &["prepare", "--root", "data", "--layout", "generic", "--out", "p"],
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("one.png") && err.contains("three.png") && !err.contains("two.png"),
        "{err}"
    );
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = prepared(d, 12);
    let m = manifest.to_str().unwrap();
    let common = [
        "--set",
        "base_width=4",
        "--set",
        "max_epochs=2",
        "--set",
        "image_size=32",
        "--seed",
        "1",
    ];

    let o = euisnet(d, &[&["train", "--manifest", m, "-q"][..], &common].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = run_dirs(&d.join("runs"));
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    for f in [
        "config.txt",
        "metrics.csv",
        "summary.txt",
        "fold0_best.ckpt",
        "fold0_log.csv",
        "fold0_epoch2.ckpt",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }

    // The echoed config reproduces the run in a new directory.
    let cfg = run.join("config.txt");
    let o = euisnet(d, &["train", "-q", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = run_dirs(&d.join("runs"));
    assert_eq!(runs.len(), 2);
    assert_eq!(
        fs::read(runs[0].join("fold0_log.csv")).unwrap(),
        fs::read(runs[1].join("fold0_log.csv")).unwrap()
    );
    assert_eq!(
        fs::read(runs[0].join("metrics.csv")).unwrap(),
        fs::read(runs[1].join("metrics.csv")).unwrap()
    );

    // Eval: the CSV re-parses to the printed table.
    let o = euisnet(
        d,
        &["eval", "--manifest", m, "--run", run.to_str().unwrap(), "--out", "ev"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    let rows = parse_csv(&fs::read_to_string(d.join("ev/metrics.csv")).unwrap()).unwrap();
    let mean = rows.iter().find(|r| r.fold == "all" && r.sample_id == "mean").unwrap();
    let std = rows.iter().find(|r| r.fold == "all" && r.sample_id == "std").unwrap();
    let all_line = table.lines().find(|l| l.starts_with("all")).unwrap();
    for (mu, sd) in mean.values.iter().zip(std.values) {
        assert!(all_line.contains(&format!("{mu:.6}±{sd:.6}")), "{all_line}");
    }
    let fold_line = table.lines().find(|l| l.starts_with('0')).unwrap();
    let fold_mean = rows.iter().find(|r| r.fold == "0" && r.sample_id == "mean").unwrap();
    for v in fold_mean.values {
        assert!(fold_line.contains(&format!("{v:.6}")));
    }

    // Identical checkpoints: zero spread.
    let best = run.join("fold0_best.ckpt");
    let b = best.to_str().unwrap();
    let o = euisnet(
        d,
        &[
            "eval",
            "--manifest",
            m,
            "--checkpoint",
            b,
            "--checkpoint",
            b,
            "--out",
            "ev2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_csv(&fs::read_to_string(d.join("ev2/metrics.csv")).unwrap()).unwrap();
    let std = rows.iter().find(|r| r.fold == "all" && r.sample_id == "std").unwrap();
    assert_eq!(std.values, [0.0; 5]);

    let o = euisnet(d, &["eval", "--manifest", m, "--checkpoint", "missing.ckpt"]);
    assert_eq!(code(&o), 2);

    // Predict.
    let images = d.join("prepared/synthetic/images");
    let img = images.join("synth_000.png");
    let args = |out: &str| {
        vec![
            "predict".to_string(),
            "--checkpoint".into(),
            b.into(),
            "--prob".into(),
            "--overlay".into(),
            "--set".into(),
            "image_size=32".into(),
            "--out".into(),
            out.into(),
            images.to_str().unwrap().into(),
        ]
    };
    let o = Command::new(env!("CARGO_BIN_EXE_euisnet"))
        .args(args("p1"))
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_euisnet"))
        .args(args("p2"))
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let mask_path = d.join("p1/synth_000_mask.png");
    assert_eq!(
        fs::read(&mask_path).unwrap(),
        fs::read(d.join("p2/synth_000_mask.png")).unwrap()
    );
    assert_eq!(fs::read_dir(d.join("p1")).unwrap().count(), 12 * 3);
    let mask = image::open(&mask_path).unwrap().to_luma8();
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

    let (model, _) = load_checkpoint::<f32>(&best).unwrap();
    let prob = model.predict(&read_image(&img).unwrap()).unwrap();
    let stored = image::open(d.join("p1/synth_000_prob.png")).unwrap().to_luma8();
    assert_eq!(prob.data().len(), stored.len());
    for ((p, q), k) in prob.data().iter().zip(stored.pixels()).zip(mask.pixels()) {
        assert!((p - q.0[0] as f32 / 255.0).abs() <= 1.0 / 255.0);
        assert_eq!(k.0[0] == 255, *p >= 0.5);
    }
}

#[test]
fn kfold_training_writes_one_best_checkpoint_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = prepared(d, 10);
    let o = euisnet(
        d,
        &[
            "train",
            "-q",
            "--manifest",
            manifest.to_str().unwrap(),
            "--set",
            "protocol=kfold",
            "--set",
            "base_width=4",
            "--set",
            "max_epochs=1",
            "--set",
            "image_size=32",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = &run_dirs(&d.join("runs"))[0];
    for k in 0..5 {
        assert!(run.join(format!("fold{k}_best.ckpt")).is_file());
    }
    let rows = parse_csv(&fs::read_to_string(run.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(
        rows.iter().filter(|r| r.sample_id == "mean" && r.fold != "all").count(),
        5
    );
    assert_eq!(
        rows.iter().filter(|r| r.fold != "all" && r.sample_id != "mean").count(),
        10
    );
}

#[test]
fn gradcheck_passes_and_catches_a_broken_backward() {
    let dir = tempfile::tempdir().unwrap();
    let o = euisnet(dir.path(), &["gradcheck", "block"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(" ok") || l.ends_with("FAIL"))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let unique: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    assert!(names.contains(&"raam/raam.block.conv.weight"), "{out}");

    let o = euisnet(dir.path(), &["gradcheck", "block", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}
