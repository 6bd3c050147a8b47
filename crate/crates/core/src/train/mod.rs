//! Losses, the Adam optimizer, learning-rate schedule, early stopping and
//! the training/evaluation loops.

mod adam;
mod looping;
mod loss;
mod schedule;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use looping::{
    best_checkpoint_name, epoch_checkpoint_name, evaluate, log_name, train_loop, validate, write_text, EpochRecord,
    RunOptions, TrainConfig, TrainLog, TrainOutcome, LOG_HEADER,
};
pub use loss::{bce_loss, dice_loss, loss_on_tape, loss_value, LossKind, DICE_SMOOTH};
pub use schedule::{lr_after_history, EarlyStopping, EpochDecision, EpochSchedule, PlateauScheduler};
