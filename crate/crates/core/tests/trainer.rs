use std::fs;

use euisnet::data::{synth_dataset, DatasetManifest, IMAGE_SIZE};
use euisnet::model::load_checkpoint;
use euisnet::param::ParamList;
use euisnet::train::{
    bce_loss, best_checkpoint_name, dice_loss, epoch_checkpoint_name, evaluate, log_name, lr_after_history, train_loop,
    Adam, EarlyStopping, PlateauScheduler, RunOptions, TrainConfig, TrainLog, DICE_SMOOTH,
};
use euisnet::{EuisNet, ModelConfig, ParamStore, Shape, Tensor};

fn small_data() -> (DatasetManifest, Vec<usize>) {
    let m = synth_dataset(8, 32, 1);
    let all = (0..m.len()).collect();
    (m, all)
}

fn small_model(seed: u64) -> EuisNet<f32> {
    EuisNet::new(ModelConfig::with_base_width(4), seed).unwrap()
}

fn param_bits(model: &EuisNet<f32>) -> Vec<u32> {
    model
        .parameters()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn bce_of_one_half_is_ln_2() {
    let shape = Shape::new(2, 1, 4, 4);
    let p = Tensor::<f64>::full(shape, 0.5);
    let t = Tensor::from_fn(shape, |_, _, h, w| ((h * 4 + w) % 3 == 0) as u8 as f64);
    assert!((bce_loss(&p, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn dice_loss_closed_forms() {
    let shape = Shape::new(1, 1, 5, 5);
    let n = 25.0;
    let ones = Tensor::<f64>::ones(shape);
    let zeros = Tensor::<f64>::zeros(shape);
    let s = DICE_SMOOTH;
    assert!((dice_loss(&zeros, &ones).unwrap() - (1.0 - s / (n + s))).abs() < 1e-12);
    assert!(dice_loss(&ones, &ones).unwrap().abs() < 1e-12);
    let half = Tensor::<f64>::full(shape, 0.5);
    let want = 1.0 - (2.0 * 0.5 * n + s) / (0.5 * n + n + s);
    assert!((dice_loss(&half, &ones).unwrap() - want).abs() < 1e-12);
}

/// Scalar Adam, written out from the update rule.
fn adam_reference(theta0: f64, grad: impl Fn(usize, f64) -> f64, steps: usize, lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for t in 1..=steps {
        let g = grad(t, theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        theta -= lr * mh / (vh.sqrt() + eps);
    }
    theta
}

#[test]
fn adam_tracks_the_scalar_recurrence() {
    let grad = |t: usize, theta: f64| (t as f64 * 0.7).sin() + 0.3 * theta;
    let starts = [0.5, -1.25, 3.0, 0.0];
    let mut store = ParamList::<f64>::new();
    store.push("w", Tensor::from_vec(Shape::new(1, 4, 1, 1), starts.to_vec()).unwrap());
    let mut adam = Adam::new();
    for t in 1..=100 {
        let p = &mut store.params[0];
        let g: Vec<f64> = p.value.data().iter().map(|&th| grad(t, th)).collect();
        p.grad = Tensor::from_vec(p.shape(), g).unwrap();
        adam.step(&mut store, 0.01).unwrap();
    }
    for (i, &s) in starts.iter().enumerate() {
        let want = adam_reference(s, grad, 100, 0.01);
        assert!((store.params[0].value.data()[i] - want).abs() <= 1e-12);
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut store = ParamList::<f64>::new();
    store.push(
        "w",
        Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 1.0, 1.0]).unwrap(),
    );
    store.params[0].grad = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![4.0, -0.02, 0.0]).unwrap();
    let mut adam = Adam::new();
    adam.step(&mut store, 0.001).unwrap();
    let v = store.params[0].value.data();
    assert!((v[0] - 0.999).abs() < 1e-9);
    assert!((v[1] - 1.001).abs() < 1e-9);
    assert_eq!(v[2], 1.0);
}

#[test]
fn plateau_quarters_the_rate_after_five_stale_epochs() {
    assert_eq!(lr_after_history(&[1.0; 5], 0.001, 5, 0.25), 0.001);
    assert_eq!(lr_after_history(&[1.0; 6], 0.001, 5, 0.25), 0.00025);
    assert_eq!(lr_after_history(&[1.0; 11], 0.001, 5, 0.25), 0.0000625);
    let mut s = PlateauScheduler::new(5, 0.25);
    let fired: Vec<bool> = [1.0, 0.9, 0.9, 0.95, 0.9, 0.91, 0.9, 0.8]
        .iter()
        .map(|&v| s.step(v, 1.0).1)
        .collect();
    assert_eq!(fired, vec![false, false, false, false, false, false, true, false]);
}

#[test]
fn early_stopping_waits_for_patience() {
    let mut e = EarlyStopping::new(3);
    let out: Vec<(bool, bool)> = [0.5, 0.6, 0.6, 0.55, 0.59, 0.7].iter().map(|&d| e.update(d)).collect();
    assert_eq!(
        out[..5],
        [
            (true, false),
            (true, false),
            (false, false),
            (false, false),
            (false, true)
        ]
    );
}

#[test]
fn single_epoch_run_writes_log_and_checkpoints() {
    let (m, all) = small_data();
    let dir = tempfile::tempdir().unwrap();
    let mut model = small_model(0);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let opts = RunOptions {
        fold: 2,
        out_dir: Some(dir.path().to_path_buf()),
        verbose: false,
    };
    let outcome = train_loop(&mut model, &m, &all, &all, &cfg, &opts).unwrap();
    assert_eq!(outcome.log.records.len(), 1);
    assert_eq!(outcome.log.records[0].lr, 0.001);
    assert!(dir.path().join(epoch_checkpoint_name(2, 1)).is_file());
    assert!(dir.path().join(best_checkpoint_name(2)).is_file());
    let log = TrainLog::parse_csv(&fs::read_to_string(dir.path().join(log_name(2))).unwrap()).unwrap();
    assert_eq!(log, outcome.log);
    let (loaded, state) = load_checkpoint::<f32>(&dir.path().join(best_checkpoint_name(2))).unwrap();
    assert_eq!(param_bits(&loaded), param_bits(&model));
    assert_eq!(state.unwrap().epoch, 1);
}

#[test]
fn only_the_latest_epoch_checkpoint_is_kept() {
    let (m, all) = small_data();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    train_loop(&mut small_model(0), &m, &all, &all, &cfg, &opts).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["fold0_best.ckpt", "fold0_epoch3.ckpt", "fold0_log.csv"]);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (m, all) = small_data();
    let mut model = small_model(3);
    let before = param_bits(&model);
    let cfg = TrainConfig {
        initial_lr: 0.0,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    train_loop(&mut model, &m, &all, &all, &cfg, &RunOptions::default()).unwrap();
    assert_eq!(param_bits(&model), before);
}

#[test]
fn learning_rate_changes_only_when_the_plateau_rule_fires() {
    let (m, all) = small_data();
    let cfg = TrainConfig {
        max_epochs: 20,
        plateau_patience: 1,
        early_stop_patience: 100,
        initial_lr: 0.05,
        ..TrainConfig::default()
    };
    let out = train_loop(
        &mut small_model(1),
        &m,
        &all[..6],
        &all[6..],
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    let mut sched = PlateauScheduler::new(cfg.plateau_patience, cfg.lr_factor);
    let mut lr = cfg.initial_lr;
    for r in &out.log.records {
        assert_eq!(r.lr, lr, "epoch {}", r.epoch);
        lr = sched.step(r.val_loss, lr).0;
    }
    assert!(
        out.log.records.iter().any(|r| r.lr < cfg.initial_lr),
        "the rule never fired"
    );
}

#[test]
fn early_stop_ends_training_patience_epochs_after_the_best() {
    let (m, all) = small_data();
    let cfg = TrainConfig {
        max_epochs: 60,
        early_stop_patience: 2,
        initial_lr: 0.05,
        ..TrainConfig::default()
    };
    let out = train_loop(
        &mut small_model(2),
        &m,
        &all[..6],
        &all[6..],
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.log.records.len(), out.best_epoch + cfg.early_stop_patience);
    let best = out
        .log
        .records
        .iter()
        .map(|r| r.val_dice)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_dice, best);
}

#[test]
fn same_seed_same_training() {
    let (m, all) = small_data();
    let cfg = TrainConfig {
        max_epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut model = small_model(5);
        let out = train_loop(&mut model, &m, &all[..6], &all[6..], &cfg, &RunOptions::default()).unwrap();
        (out.log.to_csv(), param_bits(&model))
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_trends_down_over_ten_epochs() {
    let m = synth_dataset(8, IMAGE_SIZE, 0);
    let all: Vec<usize> = (0..m.len()).collect();
    let mut model = EuisNet::<f32>::new(ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let out = train_loop(&mut model, &m, &all, &all, &cfg, &RunOptions::default()).unwrap();
    let losses: Vec<f64> = out.log.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 10);
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises <= 2, "{losses:?}");
    assert!(losses[9] < losses[0]);
}

#[test]
fn constant_half_prediction_has_zero_specificity() {
    let (m, all) = small_data();
    let mut model = small_model(0);
    model.head.weight.value.fill(0.0);
    model.head.bias.value.fill(0.0);
    let report = evaluate(&model, &m, &all, 0, 4).unwrap();
    for s in &report.samples {
        assert_eq!(s.metrics.specificity, 0.0);
        assert_eq!(s.metrics.sensitivity, 1.0);
        assert_eq!(s.counts.tn + s.counts.fn_, 0);
    }
}
