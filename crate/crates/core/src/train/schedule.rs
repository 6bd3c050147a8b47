/// Multiplies the learning rate by `factor` once the monitored loss has
/// gone `patience` epochs without a strict decrease, then starts counting
/// again.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauScheduler {
            patience,
            factor,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's validation loss. Returns the learning rate for
    /// the next epoch and whether it was reduced.
    pub fn step(&mut self, val_loss: f64, lr: f64) -> (f64, bool) {
        let improved = val_loss.is_finite() && self.best.is_none_or(|b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.stale = 0;
            return (lr, false);
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            (lr * self.factor, true)
        } else {
            (lr, false)
        }
    }
}

/// Learning rate after replaying a whole validation-loss history.
pub fn lr_after_history(history: &[f64], lr: f64, patience: usize, factor: f64) -> f64 {
    let mut s = PlateauScheduler::new(patience, factor);
    history.iter().fold(lr, |lr, &v| s.step(v, lr).0)
}

/// Stops training once the monitored score has gone `patience` epochs
/// without a strict increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records a score; returns `(improved, should_stop)`.
    pub fn update(&mut self, score: f64) -> (bool, bool) {
        if score.is_finite() && self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.stale = 0;
            return (true, false);
        }
        self.stale += 1;
        (false, self.stale >= self.patience)
    }
}

/// What the loop does after an epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    /// Learning rate for the next epoch.
    pub next_lr: f64,
    pub lr_reduced: bool,
    /// Validation Dice improved on the best so far.
    pub improved: bool,
    pub stop: bool,
}

/// The plateau schedule on validation loss together with early stopping on
/// validation Dice, as applied once per epoch by the training loop.
#[derive(Clone, Debug)]
pub struct EpochSchedule {
    pub scheduler: PlateauScheduler,
    pub stopper: EarlyStopping,
}

impl EpochSchedule {
    pub fn new(plateau_patience: usize, factor: f64, early_stop_patience: usize) -> Self {
        EpochSchedule {
            scheduler: PlateauScheduler::new(plateau_patience, factor),
            stopper: EarlyStopping::new(early_stop_patience),
        }
    }

    pub fn after_epoch(&mut self, lr: f64, val_loss: f64, val_dice: f64) -> EpochDecision {
        let (improved, stop) = self.stopper.update(val_dice);
        let (next_lr, lr_reduced) = self.scheduler.step(val_loss, lr);
        EpochDecision {
            next_lr,
            lr_reduced,
            improved,
            stop,
        }
    }
}
