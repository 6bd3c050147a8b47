//! Acceptance checks, one line per criterion:
//!
//!     cargo test --release --test acceptance

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use euisnet::commands::{gradcheck, prepare, GradCheckScale};
use euisnet::config::RunConfig;
use euisnet::data::{synth_dataset, Layout, Sample, Split, IMAGE_SIZE};
use euisnet::gradcheck::suites::{TINY_BASE_WIDTH, TINY_INPUT};
use euisnet::metrics::{compute_metrics, confusion_from_masks, THRESHOLD};
use euisnet::model::{load_checkpoint, save_checkpoint, Ctx};
use euisnet::train::{evaluate, train_loop, EpochSchedule, RunOptions, TrainConfig, TrainLog};
use euisnet::{EuisNet, Mode, ModelConfig, ParamStore, Shape, Tape, Tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let report = gradcheck(GradCheckScale::Tiny, 0, false).map_err(err)?;
    let elapsed = start.elapsed();

    let model = EuisNet::<f64>::new(ModelConfig::with_base_width(TINY_BASE_WIDTH), 0).map_err(err)?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for g in &report.groups {
        *seen.entry(g.name.as_str()).or_default() += 1;
    }
    for p in model.parameters() {
        ensure(seen.get(p.name.as_str()) == Some(&1), || {
            format!("parameter {} checked {} times", p.name, seen.get(p.name.as_str()).unwrap_or(&0))
        })?;
    }
    ensure(seen.len() == model.parameters().len(), || "report lists unknown groups".into())?;
    let worst = report.groups.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    ensure(report.max_rel_error() <= 1e-4, || {
        format!("{} has relative error {:.3e}", worst.name, worst.max_rel_error)
    })?;
    ensure(elapsed <= Duration::from_secs(600), || format!("took {:.0}s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "{} groups at 1x3x{TINY_INPUT}x{TINY_INPUT}, worst {:.2e} ({}), {:.1}s",
        report.groups.len(),
        worst.max_rel_error,
        worst.name,
        elapsed.as_secs_f64()
    ))
}

fn shape_ladder() -> Outcome {
    let model = EuisNet::<f32>::new(ModelConfig::default(), 0).map_err(err)?;
    let x = Tensor::from_fn(Shape::new(1, 3, 256, 256), |_, c, h, w| ((h * 7 + w * 3 + c) % 17) as f32 / 16.0);
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(Mode::Infer, &mut rng);
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, xv, &mut ctx).map_err(err)?;
    let sides: Vec<(usize, usize)> = out.encoder.iter().map(|v| (tape.shape(*v).h, tape.shape(*v).w)).collect();
    ensure(sides == [(256, 256), (128, 128), (64, 64), (32, 32)], || format!("encoder sides {sides:?}"))?;
    let y = tape.value(out.mask);
    ensure(y.shape() == Shape::new(1, 1, 256, 256), || format!("output {:?}", y.shape()))?;
    let (lo, hi) = y.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    ensure(lo > 0.0 && hi < 1.0, || format!("output range [{lo}, {hi}]"))?;
    Ok(format!("encoder 256/128/64/32, output 1x1x256x256 in [{lo:.4}, {hi:.4}]"))
}

fn adjoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, ca, cb) = (rng.random_range(1..=2), rng.random_range(1..=6), rng.random_range(1..=6));
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mut random = |s: Shape| Tensor::<f64>::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0));
        let a = random(Shape::new(n, ca, 2 * h, 2 * w));
        let b = random(Shape::new(n, cb, h, w));
        let k = random(Shape::new(cb, ca, 3, 3));
        let mut tape = Tape::new();
        let (av, bv, kv) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(k));
        let down = tape.conv2d_general(av, kv, None, 2, 1).map_err(err)?;
        let up = tape.conv_transpose2d(bv, kv, None).map_err(err)?;
        let gap = (tape.value(down).dot(&b) - a.dot(tape.value(up))).abs();
        worst = worst.max(gap);
    }
    ensure(worst <= 1e-10, || format!("largest gap {worst:.3e}"))?;
    Ok(format!("50 instances, largest |<Ca,b> - <a,Tb>| = {worst:.2e}"))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_identity = 0.0f64;
    for pair in 0..1000 {
        let density = [0.0, 0.05, 0.5, 0.95, 1.0][pair % 5];
        let pred: Vec<f32> = (0..64 * 64).map(|_| rng.random::<f32>()).collect();
        let gt: Vec<f32> = (0..64 * 64).map(|_| rng.random_bool(density) as u8 as f32).collect();
        let c = confusion_from_masks(&pred, &gt, THRESHOLD).map_err(err)?;
        let mut oracle = [0u64; 4];
        for (&p, &g) in pred.iter().zip(&gt) {
            oracle[((p >= 0.5) as usize) << 1 | (g == 1.0) as usize] += 1;
        }
        let [tn, fn_, fp, tp] = oracle;
        ensure((c.tp, c.tn, c.fp, c.fn_) == (tp, tn, fp, fn_), || format!("pair {pair}: counts differ"))?;
        let frac = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        let m = compute_metrics(&c);
        let want = [
            frac(tp, tp + fp + fn_),
            frac(2 * tp, 2 * tp + fp + fn_),
            frac(tp + tn, 4096),
            frac(tp, tp + fn_),
            frac(tn, tn + fp),
        ];
        ensure(m.to_array() == want, || format!("pair {pair}: {:?} vs {want:?}", m.to_array()))?;
        worst_identity = worst_identity.max((m.dice - 2.0 * m.jaccard / (1.0 + m.jaccard)).abs());
    }
    ensure(worst_identity <= 1e-12, || format!("D = 2J/(1+J) off by {worst_identity:.3e}"))?;
    Ok(format!("1000 pairs exact, D-J identity within {worst_identity:.1e}"))
}

/// Small BUSI-style folder tree with `n` image/mask pairs.
fn busi_tree(root: &Path, n: usize) {
    for i in 0..n {
        let class = ["benign", "malignant", "normal"][i % 3];
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        let name = format!("{class} ({i})");
        RgbImage::from_fn(20, 16, |x, y| Rgb([(x * 9 + y + i as u32) as u8; 3]))
            .save(dir.join(format!("{name}.png")))
            .unwrap();
        GrayImage::from_fn(20, 16, |x, y| Luma([if (x + y) % 7 < 3 { 255 } else { 0 }]))
            .save(dir.join(format!("{name}_mask.png")))
            .unwrap();
    }
}

fn augmentation_factor() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::default();
    cfg.image_size = 32;
    let synth = prepare(&cfg, Some(23), &dir.path().join("synth"), false).map_err(err)?;
    ensure(synth.total == 5 * synth.originals && synth.originals == 23, || {
        format!("synthetic: {} -> {}", synth.originals, synth.total)
    })?;
    ensure(synth.report().contains("after augmentation: 115"), || synth.report())?;

    busi_tree(&dir.path().join("busi"), 31);
    cfg.dataset_root = Some(dir.path().join("busi"));
    cfg.layout = Layout::Busi;
    let busi = prepare(&cfg, None, &dir.path().join("busi_out"), false).map_err(err)?;
    ensure(busi.total == 5 * busi.originals && busi.originals == 31, || {
        format!("folder dataset: {} -> {}", busi.originals, busi.total)
    })?;
    Ok("synthetic 23 -> 115, folder dataset 31 -> 155".into())
}

fn split_integrity() -> Outcome {
    let tiny = |n: usize| {
        let samples = (0..n)
            .map(|i| {
                let image = Tensor::full(Shape::new(1, 3, 2, 2), i as f32 / n as f32);
                Sample::new(format!("s{i}"), image, Tensor::zeros(Shape::new(1, 1, 2, 2))).unwrap()
            })
            .collect();
        euisnet::data::DatasetManifest::from_samples(samples)
    };
    let mut m = tiny(780);
    m.augment();
    euisnet::commands::assign_splits(&mut m, 5, 0).map_err(err)?;
    let plan = m.holdout_plan().map_err(err)?;
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| plan.count(s));
    ensure(counts == [624, 78, 78], || format!("hold-out on 780: {counts:?}"))?;

    let mut plans = vec![plan];
    for f in 0..5 {
        plans.push(m.kfold_plan(f, 0).map_err(err)?);
    }
    for plan in &plans {
        for split in [Split::Val, Split::Test] {
            let leaked = m.entries_for(plan, split).into_iter().filter(|&i| !m.entries[i].provenance.is_original()).count();
            ensure(leaked == 0, || format!("{leaked} augmented entries in {split:?}"))?;
        }
    }

    let mut k = tiny(637);
    euisnet::commands::assign_splits(&mut k, 5, 3).map_err(err)?;
    let mut sizes = k.fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ensure(sizes == [128, 128, 127, 127, 127], || format!("5-fold on 637: {sizes:?}"))?;
    Ok("780 -> 624/78/78, 637 -> 128/128/127/127/127, no augmented entry in val or test".into())
}

fn overfit() -> Outcome {
    let m = synth_dataset(8, IMAGE_SIZE, 7);
    let all: Vec<usize> = (0..m.len()).collect();
    let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(8), 0).map_err(err)?;
    let cfg = TrainConfig {
        max_epochs: 200,
        early_stop_patience: 200,
        target_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train_loop(&mut model, &m, &all, &all, &cfg, &RunOptions::default()).map_err(err)?;
    let elapsed = start.elapsed();
    let dice = evaluate(&model, &m, &all, 0, cfg.batch_size).map_err(err)?.overall.mean.dice;
    let epochs = out.log.records.len();
    ensure(dice >= 0.95, || format!("train Dice {dice:.4} after {epochs} epochs"))?;
    ensure(elapsed <= Duration::from_secs(1800), || format!("took {:.0}s", elapsed.as_secs_f64()))?;
    Ok(format!("train Dice {dice:.4} after {epochs} epochs, {:.1}s", elapsed.as_secs_f64()))
}

/// Log produced by feeding a fixed validation history through the loop's
/// per-epoch schedule.
fn replay(history: &[(f64, f64)], cfg: &TrainConfig) -> (Vec<f64>, Option<usize>) {
    let mut schedule = EpochSchedule::new(cfg.plateau_patience, cfg.lr_factor, cfg.early_stop_patience);
    let mut lr = cfg.initial_lr;
    let mut lrs = Vec::new();
    for (i, &(loss, dice)) in history.iter().enumerate() {
        lrs.push(lr);
        let d = schedule.after_epoch(lr, loss, dice);
        lr = d.next_lr;
        if d.stop {
            return (lrs, Some(i + 1));
        }
    }
    (lrs, None)
}

fn schedule_contract() -> Outcome {
    let cfg = TrainConfig::default();
    // Loss improves for two epochs and then stalls; Dice does the same.
    let stalled: Vec<(f64, f64)> = (1..=30).map(|e| if e <= 2 { (1.0 / e as f64, 0.1 * e as f64) } else { (0.5, 0.2) }).collect();
    let (lrs, stop) = replay(&stalled, &cfg);
    let mut want = vec![0.001; 7];
    want.extend([0.00025; 5]);
    ensure(lrs == want, || format!("lr column {lrs:?}"))?;
    ensure(stop == Some(2 + cfg.early_stop_patience), || format!("stopped at {stop:?}"))?;

    // A loss that keeps improving never lowers the rate, even while Dice stalls.
    let improving: Vec<(f64, f64)> = (1..=8).map(|e| (1.0 / e as f64, 0.5)).collect();
    let (lrs, stop) = replay(&improving, &cfg);
    ensure(lrs == [0.001; 8] && stop.is_none(), || format!("improving loss gave {lrs:?}, stop {stop:?}"))?;

    // The training loop itself follows the same schedule.
    let m = synth_dataset(8, 32, 1);
    let all: Vec<usize> = (0..8).collect();
    let run_cfg = TrainConfig {
        initial_lr: 0.05,
        max_epochs: 120,
        ..TrainConfig::default()
    };
    let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 2).map_err(err)?;
    let out = train_loop(&mut model, &m, &all[..6], &all[6..], &run_cfg, &RunOptions::default()).map_err(err)?;
    let history: Vec<(f64, f64)> = out.log.records.iter().map(|r| (r.val_loss, r.val_dice)).collect();
    let (lrs, stop) = replay(&history, &run_cfg);
    let logged: Vec<f64> = out.log.records.iter().map(|r| r.lr).collect();
    ensure(logged == lrs, || format!("logged lr {logged:?} vs replay {lrs:?}"))?;
    ensure(out.stopped_early && stop == Some(logged.len()), || {
        format!("run of {} epochs, replay stop {stop:?}", logged.len())
    })?;
    ensure(logged.len() == out.best_epoch + run_cfg.early_stop_patience, || "stop epoch".into())?;
    let reductions = logged.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(format!(
        "0.001 -> 0.00025 at epoch 8 after 5 stale epochs, stop at epoch 12; training run stopped at epoch {} with {reductions} reductions",
        logged.len()
    ))
}

fn determinism() -> Outcome {
    let bits = |m: &EuisNet<f32>| -> Vec<u32> {
        m.parameters().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
    };
    let a = EuisNet::<f32>::new(ModelConfig::default(), 42).map_err(err)?;
    let b = EuisNet::<f32>::new(ModelConfig::default(), 42).map_err(err)?;
    ensure(bits(&a) == bits(&b), || "initial parameters differ".into())?;

    let m = synth_dataset(8, 32, 5);
    let all: Vec<usize> = (0..8).collect();
    let cfg = TrainConfig {
        max_epochs: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let x = Tensor::from_fn(Shape::new(2, 3, 32, 32), |n, c, h, w| ((n + c * 5 + h * w) % 9) as f32 / 8.0);
    let run = || -> Result<(String, Vec<u8>), String> {
        let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 11).map_err(err)?;
        let out = train_loop(&mut model, &m, &all[..6], &all[6..], &cfg, &RunOptions::default()).map_err(err)?;
        let masks = model.predict(&x).map_err(err)?.data().iter().map(|&p| (p as f64 >= THRESHOLD) as u8).collect();
        Ok((out.log.to_csv(), masks))
    };
    let (log_a, mask_a) = run()?;
    let (log_b, mask_b) = run()?;
    ensure(log_a == log_b, || "training logs differ".into())?;
    ensure(TrainLog::parse_csv(&log_a).map_err(err)?.records.len() == 4, || "log length".into())?;
    ensure(mask_a == mask_b, || "predicted masks differ".into())?;
    Ok("identical init, 4-epoch logs and predicted masks".into())
}

fn checkpoint_round_trip() -> Outcome {
    let m = synth_dataset(6, 32, 9);
    let all: Vec<usize> = (0..6).collect();
    let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 3).map_err(err)?;
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    // Trained so batch-norm running statistics are not at their defaults.
    train_loop(&mut model, &m, &all, &all, &cfg, &RunOptions::default()).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, None).map_err(err)?;
    let (loaded, _) = load_checkpoint::<f32>(&path).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..10 {
        let side = [32, 48, 64][i % 3];
        let x = Tensor::from_fn(Shape::new(1, 3, side, side), |_, _, _, _| rng.random::<f32>());
        let (p, q) = (model.predict(&x).map_err(err)?, loaded.predict(&x).map_err(err)?);
        let same = p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("input {i} differs after reload"))?;
    }
    Ok("10 random inputs bit-identical after save and load".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check, tiny network", gradients),
        ("shape ladder at 256", shape_ladder),
        ("transposed conv adjoint", adjoint),
        ("metric oracle", metric_oracle),
        ("augmentation factor", augmentation_factor),
        ("split integrity", split_integrity),
        ("overfit capacity", overfit),
        ("schedule and early stop", schedule_contract),
        ("determinism", determinism),
        ("checkpoint round trip", checkpoint_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == (i + 1).to_string()) {
            continue;
        }
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
