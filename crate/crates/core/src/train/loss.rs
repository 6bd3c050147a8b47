use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Smoothing constant of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

/// Training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Dice,
    /// `bce + dice` with equal weights.
    #[default]
    BceDice,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
            LossKind::BceDice => "bce+dice",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            "bce+dice" => Ok(LossKind::BceDice),
            _ => Err(Error::Config(format!(
                "unknown loss '{s}' (expected bce, dice or bce+dice)"
            ))),
        }
    }
}

/// Records the loss of `pred` (probabilities) against `target` on the tape.
pub fn loss_on_tape<T: Scalar>(tape: &mut Tape<T>, kind: LossKind, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let smooth = T::from_f64_lossy(DICE_SMOOTH);
    match kind {
        LossKind::Bce => tape.bce(pred, target),
        LossKind::Dice => tape.soft_dice(pred, target, smooth),
        LossKind::BceDice => {
            let b = tape.bce(pred, target)?;
            let d = tape.soft_dice(pred, target, smooth)?;
            tape.add(b, d)
        }
    }
}

/// Value of the loss without keeping a graph.
pub fn loss_value<T: Scalar>(kind: LossKind, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = loss_on_tape(&mut tape, kind, p, target)?;
    Ok(tape.value(l).to_scalar()?.as_f64())
}

/// Mean binary cross-entropy, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    loss_value(LossKind::Bce, pred, target)
}

/// `1 - (2Σpt + 1) / (Σp + Σt + 1)`.
pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    loss_value(LossKind::Dice, pred, target)
}
