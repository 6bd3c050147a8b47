use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_iter, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion_from_masks, MetricsReport, SampleMetrics, THRESHOLD};
use crate::model::{save_checkpoint, Ctx, EuisNet, TrainingState};
use crate::param::ParamStore;
use crate::tape::{Mode, Tape};
use crate::tensor::{Scalar, Tensor};

use super::adam::Adam;
use super::loss::{loss_on_tape, loss_value, LossKind};
use super::schedule::{EpochDecision, EpochSchedule};

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Stop as soon as validation Dice reaches this value.
    pub target_dice: Option<f64>,
    /// Keep every per-epoch checkpoint instead of only the latest.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.001,
            max_epochs: 60,
            plateau_patience: 5,
            lr_factor: 0.25,
            early_stop_patience: 10,
            batch_size: 8,
            loss: LossKind::BceDice,
            seed: 0,
            target_dice: None,
            keep_epoch_checkpoints: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return bad(format!(
                "initial_lr must be a non-negative number, got {}",
                self.initial_lr
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_loss,val_dice";

impl TrainLog {
    /// CSV with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{LOG_HEADER}");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_loss, r.val_dice);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Usage("not a training log".into()));
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Usage(format!("malformed log row: {l}")))
                };
                Ok(EpochRecord {
                    epoch: num(0)? as usize,
                    lr: num(1)?,
                    train_loss: num(2)?,
                    val_loss: num(3)?,
                    val_dice: num(4)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { records })
    }
}

/// Where and how a training run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Fold index used in file names (0 for hold-out runs).
    pub fold: usize,
    /// Directory for checkpoints and the log; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

/// Result of [`train_loop`]. The model passed in holds the final weights.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub stopped_early: bool,
    pub best_checkpoint: Option<PathBuf>,
}

pub fn epoch_checkpoint_name(fold: usize, epoch: usize) -> String {
    format!("fold{fold}_epoch{epoch}.ckpt")
}

pub fn best_checkpoint_name(fold: usize) -> String {
    format!("fold{fold}_best.ckpt")
}

pub fn log_name(fold: usize) -> String {
    format!("fold{fold}_log.csv")
}

/// Validation loss and mean per-sample Dice in inference mode.
pub fn validate<T: Scalar>(
    model: &EuisNet<T>,
    m: &DatasetManifest,
    entries: &[usize],
    batch_size: usize,
    loss: LossKind,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total_loss = 0.0;
    let mut total_dice = 0.0;
    let mut count = 0usize;
    for batch in batch_iter(m, entries, batch_size, false, &mut rng)? {
        let batch = batch?;
        let images: Tensor<T> = batch.images.cast();
        let masks: Tensor<T> = batch.masks.cast();
        let pred = model.predict(&images)?;
        total_loss += loss_value(loss, &pred, &masks)? * batch.len() as f64;
        for n in 0..batch.len() {
            let c = confusion_from_masks(pred.item(n), masks.item(n), THRESHOLD)?;
            total_dice += compute_metrics(&c).dice;
        }
        count += batch.len();
    }
    Ok((total_loss / count as f64, total_dice / count as f64))
}

fn training_state<T: Scalar>(adam: &Adam<T>, epoch: usize, lr: f64, best: f64) -> TrainingState {
    TrainingState {
        epoch: epoch as u32,
        lr,
        best_metric: best,
        adam_step: adam.step_count(),
        moments: adam.records(),
    }
}

/// Trains `model` on the `train` entries of `m`, validating on `val` after
/// every epoch.
///
/// Each epoch shuffles the training entries, takes one Adam step per batch
/// and folds batch-norm statistics into the running averages. The learning
/// rate follows a plateau schedule on validation loss; training stops at
/// `max_epochs`, when validation Dice stalls for `early_stop_patience`
/// epochs, or when it reaches `target_dice`. On return `model` holds the
/// weights of the best validation epoch.
pub fn train_loop<T: Scalar>(
    model: &mut EuisNet<T>,
    m: &DatasetManifest,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (opts.fold as u64).wrapping_mul(0x5851_f42d_4c95_7f2d));
    let mut adam = Adam::<T>::new();
    let mut schedule = EpochSchedule::new(cfg.plateau_patience, cfg.lr_factor, cfg.early_stop_patience);
    let mut lr = cfg.initial_lr;
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, EuisNet<T>)> = None;
    let mut best_path = None;
    let mut previous_epoch_ckpt: Option<PathBuf> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let batches = batch_iter(m, train, cfg.batch_size, true, &mut rng)?.collect::<Vec<_>>();
        for batch in batches {
            let batch = batch?;
            let images: Tensor<T> = batch.images.cast();
            let masks: Tensor<T> = batch.masks.cast();
            let mut tape = Tape::new();
            let x = tape.constant(images);
            let mut ctx = Ctx::new(Mode::Train, &mut rng);
            let out = model.forward(&mut tape, x, &mut ctx)?;
            let bn_updates = std::mem::take(&mut ctx.bn_updates);
            let loss = loss_on_tape(&mut tape, cfg.loss, out.mask, &masks)?;
            let value = tape.value(loss).to_scalar()?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss is {value} at epoch {epoch} (batch starting with '{}', lr {lr})",
                    batch.ids[0]
                )));
            }
            let grads = tape.backward(loss)?;
            drop(tape);
            model.zero_grad();
            grads.accumulate_into(model);
            adam.step(model, lr)?;
            model.apply_bn_updates(&bn_updates)?;
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let (val_loss, val_dice) = validate(model, m, val, cfg.batch_size, cfg.loss)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_dice,
        };
        log.records.push(record);
        if opts.verbose {
            eprintln!(
                "fold {} epoch {epoch:>3}  lr {lr:.3e}  train {train_loss:.5}  val {val_loss:.5}  dice {val_dice:.4}",
                opts.fold
            );
        }

        let EpochDecision {
            next_lr,
            improved,
            stop,
            ..
        } = schedule.after_epoch(lr, val_loss, val_dice);
        if improved {
            best = Some((epoch, val_dice, model.clone()));
        }
        let best_dice = schedule.stopper.best().unwrap_or(f64::NAN);
        if let Some(dir) = &opts.out_dir {
            let state = training_state(&adam, epoch, next_lr, best_dice);
            let path = dir.join(epoch_checkpoint_name(opts.fold, epoch));
            save_checkpoint(&path, model, Some(&state))?;
            if improved {
                let bp = dir.join(best_checkpoint_name(opts.fold));
                fs::copy(&path, &bp).map_err(|e| Error::io(&bp, e))?;
                best_path = Some(bp);
            }
            if !cfg.keep_epoch_checkpoints {
                if let Some(prev) = previous_epoch_ckpt.replace(path) {
                    fs::remove_file(&prev).map_err(|e| Error::io(&prev, e))?;
                }
            }
            let lp = dir.join(log_name(opts.fold));
            fs::write(&lp, log.to_csv()).map_err(|e| Error::io(&lp, e))?;
        }
        lr = next_lr;
        if cfg.target_dice.is_some_and(|t| val_dice >= t) {
            break;
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_dice, best_model) = best
        .ok_or_else(|| Error::NonFinite("validation Dice was never finite; no checkpoint could be selected".into()))?;
    *model = best_model;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_dice,
        stopped_early,
        best_checkpoint: best_path,
    })
}

/// Inference-mode metrics for each of `entries`, tagged with `fold`.
pub fn evaluate<T: Scalar>(
    model: &EuisNet<T>,
    m: &DatasetManifest,
    entries: &[usize],
    fold: usize,
    batch_size: usize,
) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut samples = Vec::with_capacity(entries.len());
    for batch in batch_iter(m, entries, batch_size, false, &mut rng)? {
        let batch = batch?;
        let images: Tensor<T> = batch.images.cast();
        let masks: Tensor<T> = batch.masks.cast();
        let pred = model.predict(&images)?;
        for (n, id) in batch.ids.iter().enumerate() {
            let counts = confusion_from_masks(pred.item(n), masks.item(n), THRESHOLD)?;
            samples.push(SampleMetrics {
                fold,
                sample_id: id.clone(),
                counts,
                metrics: compute_metrics(&counts),
            });
        }
    }
    MetricsReport::from_samples(fold, samples)
}

/// Writes `text` to `dir/name`, creating `dir` if needed.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}
