//! The operations behind the `euisnet` command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Protocol, RunConfig};
use crate::data::{
    load_dataset, read_image, read_manifest, resize_bilinear_tensor, synth_samples, write_gray_png, write_manifest,
    write_rgb_png, DatasetManifest, Layout, Split, SplitPlan, HOLDOUT_RATIOS,
};
use crate::error::{Error, Result};
use crate::gradcheck::{block_suite, tiny_model_suite, GradCheckOptions, GradCheckReport};
use crate::metrics::{aggregate_folds, MetricsReport};
use crate::model::{load_checkpoint, EuisNet};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::train::{evaluate, train_loop, write_text, RunOptions, TrainOutcome};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const CONFIG_NAME: &str = "config.txt";
pub const METRICS_NAME: &str = "metrics.csv";

/// Creates `base/<prefix>-YYYYmmdd-HHMMSS`, adding `-1`, `-2`, … if that
/// name is taken. Existing directories are never reused.
pub fn fresh_run_dir(base: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    for n in 0.. {
        let name = if n == 0 {
            format!("{prefix}-{stamp}")
        } else {
            format!("{prefix}-{stamp}-{n}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Counts reported by [`prepare`].
#[derive(Clone, Debug)]
pub struct PrepareSummary {
    pub manifest: PathBuf,
    pub originals: usize,
    pub total: usize,
    /// Originals in train/val/test.
    pub holdout: [usize; 3],
    pub fold_sizes: Vec<usize>,
}

impl PrepareSummary {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "original samples:  {}", self.originals);
        let _ = writeln!(s, "after augmentation: {}", self.total);
        let [tr, va, te] = self.holdout;
        let _ = writeln!(s, "hold-out split:    train {tr} / val {va} / test {te}");
        let folds: Vec<String> = self.fold_sizes.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "fold sizes:        {}", folds.join(" "));
        let _ = writeln!(s, "manifest:          {}", self.manifest.display());
        s
    }
}

/// Assigns hold-out splits and folds to the originals of `m`, seeded by `seed`.
pub fn assign_splits(m: &mut DatasetManifest, folds: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.split_holdout(HOLDOUT_RATIOS, &mut rng)?;
    m.split_kfold(folds, &mut rng)
}

/// Writes `n` synthetic samples as PNGs under `dir/images` and `dir/masks`.
pub fn write_synthetic(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    for s in synth_samples(n, size, seed) {
        let name = format!("{}.png", s.sample.id);
        write_rgb_png(&dir.join("images").join(&name), &s.sample.image, 0)?;
        write_gray_png(&dir.join("masks").join(&name), &s.sample.mask, 0)?;
    }
    Ok(())
}

/// Loads a dataset (or writes a synthetic one), resizes, augments and
/// splits it, and writes `out/manifest.tsv`.
pub fn prepare(cfg: &RunConfig, synthetic: Option<usize>, out: &Path, force: bool) -> Result<PrepareSummary> {
    cfg.validate()?;
    let manifest_path = out.join(MANIFEST_NAME);
    if manifest_path.exists() && !force {
        return Err(Error::Usage(format!(
            "{} already exists (use --force to replace it)",
            manifest_path.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let size = (cfg.image_size, cfg.image_size);
    let mut m = match (synthetic, &cfg.dataset_root) {
        (Some(n), _) => {
            let dir = out.join("synthetic");
            write_synthetic(&dir, n, cfg.image_size, cfg.train.seed)?;
            load_dataset(&dir, Layout::Generic, Some(size))?
        }
        (None, Some(root)) => load_dataset(root, cfg.layout, Some(size))?,
        (None, None) => return Err(Error::Usage("no dataset given (use --root or --synthetic)".into())),
    };
    if cfg.augment {
        m.augment();
    }
    assign_splits(&mut m, cfg.folds, cfg.train.seed)?;
    write_manifest(&m, &manifest_path)?;
    let plan = m.holdout_plan()?;
    Ok(PrepareSummary {
        manifest: manifest_path,
        originals: m.num_originals(),
        total: m.len(),
        holdout: [
            plan.count(Split::Train),
            plan.count(Split::Val),
            plan.count(Split::Test),
        ],
        fold_sizes: m.fold_sizes(),
    })
}

/// Resolved configuration and model size, without training.
pub fn dry_run(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let model = EuisNet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut s = cfg.to_text();
    let _ = writeln!(s, "# parameters: {}", model.num_parameters());
    Ok(s)
}

/// Plans for each fold of the configured protocol: `(fold, plan)`.
pub fn fold_plans(m: &DatasetManifest, cfg: &RunConfig) -> Result<Vec<(usize, SplitPlan)>> {
    match cfg.protocol {
        Protocol::Holdout => Ok(vec![(0, m.holdout_plan()?)]),
        Protocol::Kfold => {
            let k = m
                .num_folds
                .ok_or_else(|| Error::Usage("manifest has no fold assignment".into()))?;
            (0..k).map(|f| Ok((f, m.kfold_plan(f, cfg.train.seed)?))).collect()
        }
    }
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.manifest
        .as_deref()
        .ok_or_else(|| Error::Usage("no manifest given (use --manifest or set manifest in the config)".into()))
}

/// Artifacts of [`train`].
#[derive(Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub folds: Vec<(usize, TrainOutcome)>,
    pub report: MetricsReport,
}

/// Trains one model per fold of the configured protocol inside a fresh run
/// directory, then evaluates each best model on its test split.
pub fn train(cfg: &RunConfig, verbose: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let path = manifest_path(cfg)?;
    if !path.exists() {
        return Err(Error::Usage(format!("manifest {} does not exist", path.display())));
    }
    let m = read_manifest(path)?;
    let plans = fold_plans(&m, cfg)?;
    let run_dir = fresh_run_dir(&cfg.out_dir, "run")?;
    let mut resolved = cfg.clone();
    resolved.manifest = Some(fs::canonicalize(path).map_err(|e| Error::io(path, e))?);
    write_text(&run_dir, CONFIG_NAME, &resolved.to_text())?;

    let mut folds = Vec::new();
    let mut reports = Vec::new();
    for (fold, plan) in plans {
        let train_entries = m.entries_for(&plan, Split::Train);
        let val_entries = m.entries_for(&plan, Split::Val);
        let test_entries = m.entries_for(&plan, Split::Test);
        let mut model = EuisNet::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
        let opts = RunOptions {
            fold,
            out_dir: Some(run_dir.clone()),
            verbose,
        };
        let outcome = train_loop(&mut model, &m, &train_entries, &val_entries, &cfg.train, &opts)?;
        reports.push(evaluate(&model, &m, &test_entries, fold, cfg.train.batch_size)?);
        folds.push((fold, outcome));
    }
    let report = aggregate_folds(&reports)?;
    report.write_csv(&run_dir.join(METRICS_NAME))?;
    write_text(&run_dir, "summary.txt", &report.summary_table())?;
    Ok(TrainSummary { run_dir, folds, report })
}

/// Fold index encoded in a checkpoint file name (`fold3_best.ckpt` → 3).
pub fn fold_from_name(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("fold")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// `fold*_best.ckpt` files of a run directory, ordered by fold.
pub fn run_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("_best.ckpt"))
        })
        .filter_map(|p| fold_from_name(&p).map(|f| (f, p)))
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Usage(format!(
            "no fold*_best.ckpt files in {}",
            run_dir.display()
        )));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Evaluates checkpoints on the test split(s) of the manifest. Under the
/// k-fold protocol each checkpoint is scored on the fold named in its file
/// name (or its position); under hold-out every checkpoint is scored on the
/// test split. Writes `metrics.csv` and `summary.txt` to `out`.
pub fn eval(cfg: &RunConfig, checkpoints: &[PathBuf], out: &Path) -> Result<MetricsReport> {
    if checkpoints.is_empty() {
        return Err(Error::Usage("no checkpoint given".into()));
    }
    let missing: Vec<String> = checkpoints
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Usage(format!("checkpoint not found: {}", missing.join(", "))));
    }
    let m = read_manifest(manifest_path(cfg)?)?;
    let mut reports = Vec::new();
    for (i, ckpt) in checkpoints.iter().enumerate() {
        let (model, _) = load_checkpoint::<f32>(ckpt)?;
        let (fold, plan) = match cfg.protocol {
            Protocol::Holdout => (i, m.holdout_plan()?),
            Protocol::Kfold => {
                let f = fold_from_name(ckpt).unwrap_or(i);
                (f, m.kfold_plan(f, cfg.train.seed)?)
            }
        };
        let test = m.entries_for(&plan, Split::Test);
        reports.push(evaluate(&model, &m, &test, fold, cfg.train.batch_size)?);
    }
    let report = aggregate_folds(&reports)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write_csv(&out.join(METRICS_NAME))?;
    write_text(out, "summary.txt", &report.summary_table())?;
    Ok(report)
}

/// Expands directories into the PNG files they contain.
pub fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("no input images".into()));
    }
    Ok(out)
}

/// Marks pixels of `mask` that have a 4-neighbour of the other class.
pub fn mask_boundary(mask: &Tensor<f32>) -> Vec<bool> {
    let s = mask.shape();
    let on = |h: usize, w: usize| mask.at(0, 0, h, w) >= 0.5;
    let mut out = vec![false; s.h * s.w];
    for h in 0..s.h {
        for w in 0..s.w {
            if !on(h, w) {
                continue;
            }
            let edge = h == 0 || w == 0 || h + 1 == s.h || w + 1 == s.w;
            out[h * s.w + w] = edge || !on(h - 1, w) || !on(h + 1, w) || !on(h, w - 1) || !on(h, w + 1);
        }
    }
    out
}

/// Input image with the mask boundary drawn in red.
pub fn overlay(image: &Tensor<f32>, mask: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let edge = mask_boundary(mask);
    Tensor::from_fn(s, |n, c, h, w| {
        if edge[h * s.w + w] {
            if c == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            image.at(n, c, h, w)
        }
    })
}

/// What [`predict`] should write besides the binary masks.
#[derive(Clone, Copy, Debug, Default)]
pub struct PredictOptions {
    pub probability: bool,
    pub overlay: bool,
    pub image_size: usize,
}

/// Segments each input image, writing `<stem>_mask.png` (0/255) and
/// optionally `<stem>_prob.png` and `<stem>_overlay.png` into `out`.
/// Images are resized to `image_size` first; outputs share that size.
pub fn predict(checkpoint: &Path, inputs: &[PathBuf], out: &Path, opts: PredictOptions) -> Result<Vec<PathBuf>> {
    if !checkpoint.is_file() {
        return Err(Error::Usage(format!("checkpoint not found: {}", checkpoint.display())));
    }
    let (model, _) = load_checkpoint::<f32>(checkpoint)?;
    if model.config.in_channels != 3 {
        return Err(Error::Shape(format!(
            "checkpoint expects {} input channels; predict reads RGB images",
            model.config.in_channels
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for path in collect_images(inputs)? {
        let image = read_image(&path)?;
        let image = resize_bilinear_tensor(&image, opts.image_size, opts.image_size)?;
        let prob = model.predict(&image)?;
        let mask = prob.map(|p| {
            if p as f64 >= crate::metrics::THRESHOLD {
                1.0
            } else {
                0.0
            }
        });
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mp = out.join(format!("{stem}_mask.png"));
        write_gray_png(&mp, &mask, 0)?;
        written.push(mp);
        if opts.probability {
            let pp = out.join(format!("{stem}_prob.png"));
            write_gray_png(&pp, &prob, 0)?;
            written.push(pp);
        }
        if opts.overlay {
            let op = out.join(format!("{stem}_overlay.png"));
            write_rgb_png(&op, &overlay(&image, &mask), 0)?;
            written.push(op);
        }
    }
    Ok(written)
}

/// Scale of the gradient-check suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckScale {
    /// The whole network at `1×3×32×32`, base width 4.
    Tiny,
    /// Every kernel and block in isolation.
    Block,
}

pub fn gradcheck(scale: GradCheckScale, seed: u64, fault: bool) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    match scale {
        GradCheckScale::Tiny => tiny_model_suite(&opts, fault),
        GradCheckScale::Block => block_suite(&opts, fault),
    }
}

/// One line per group, then a verdict.
pub fn gradcheck_table(r: &GradCheckReport) -> String {
    let mut s = String::new();
    let width = r.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(
        s,
        "{:<width$}  {:>9}  {:>10}  {:>10}  {:>5}  status",
        "group", "checked", "max_rel", "max_abs", "small"
    );
    for g in &r.groups {
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>10.3e}  {:>10.3e}  {:>5}  {}",
            g.name,
            format!("{}/{}", g.checked, g.numel),
            g.max_rel_error,
            g.max_abs_error,
            g.reduced_steps,
            if g.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = r.groups.iter().filter(|g| !g.passed).count();
    let _ = writeln!(
        s,
        "{} groups, {failed} failed, max relative error {:.3e} (tolerance {:.0e})",
        r.groups.len(),
        r.max_rel_error(),
        r.tol
    );
    s
}
