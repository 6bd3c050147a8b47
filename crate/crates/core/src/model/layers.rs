//! Parameterized building blocks.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamIds, Parameter};
use crate::tape::{Mode, NormStats, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub gamma: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each statistic was computed over (`N·H·W`).
    pub count: usize,
}

/// Per-pass state: mode, the dropout generator, and collected BN statistics.
pub struct Ctx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        Ctx {
            mode,
            rng,
            bn_updates: Vec::new(),
        }
    }
}

/// Parameter factory used while building a model.
pub struct Init<'a> {
    pub ids: ParamIds,
    pub rng: &'a mut dyn RngCore,
}

impl Init<'_> {
    /// Uniform `±sqrt(6 / fan_in)`.
    pub fn he_uniform<T: Scalar>(&mut self, name: String, shape: Shape, fan_in: usize) -> Parameter<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(rng.random_range(-bound..bound)));
        Parameter::new(self.ids.next_id(), name, t)
    }

    pub fn constant<T: Scalar>(&mut self, name: String, shape: Shape, v: f64) -> Parameter<T> {
        Parameter::new(self.ids.next_id(), name, Tensor::full(shape, T::from_f64_lossy(v)))
    }
}

/// Stride-1 "same" convolution with bias; kernel 3 (padding 1) or 1.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(init: &mut Init<'_>, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Conv2d {
            weight: init.he_uniform(
                format!("{name}.weight"),
                Shape::new(out_ch, in_ch, kernel, kernel),
                in_ch * kernel * kernel,
            ),
            bias: init.constant(format!("{name}.bias"), Shape::new(1, out_ch, 1, 1), 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv2d(x, w, Some(b))
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Kernel-3, stride-2 transposed convolution that doubles `H×W`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    /// `in × out × 3 × 3`.
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(init: &mut Init<'_>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        ConvTranspose2d {
            weight: init.he_uniform(format!("{name}.weight"), Shape::new(in_ch, out_ch, 3, 3), in_ch * 9),
            bias: init.constant(format!("{name}.bias"), Shape::new(1, out_ch, 1, 1), 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv_transpose2d(x, w, Some(b))
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Batch normalization with a per-channel affine transform and running
/// statistics (momentum 0.1, epsilon 1e-5).
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        let affine = Shape::new(1, channels, 1, 1);
        BatchNorm2d {
            gamma: init.constant(format!("{name}.gamma"), affine, 1.0),
            beta: init.constant(format!("{name}.beta"), affine, 0.0),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        match ctx.mode {
            Mode::Train => {
                let s = tape.shape(x);
                let (y, stats) = tape.batch_norm(x, g, b, NormStats::Batch, BN_EPS)?;
                if let Some((mean, var)) = stats {
                    ctx.bn_updates.push(BnUpdate {
                        gamma: self.gamma.id,
                        mean,
                        var,
                        count: s.n * s.plane(),
                    });
                }
                Ok(y)
            }
            Mode::Infer => {
                let mean: Vec<f64> = self.running_mean.iter().map(|v| v.as_f64()).collect();
                let var: Vec<f64> = self.running_var.iter().map(|v| v.as_f64()).collect();
                let (y, _) = tape.batch_norm(x, g, b, NormStats::Running { mean: &mean, var: &var }, BN_EPS)?;
                Ok(y)
            }
        }
    }

    /// Exponential moving average update; the variance uses the unbiased
    /// estimate `var · n/(n-1)`.
    pub fn apply_update(&mut self, u: &BnUpdate) -> Result<()> {
        if u.mean.len() != self.channels() || u.var.len() != self.channels() {
            return Err(Error::Shape("batch-norm update has the wrong channel count".into()));
        }
        let unbias = if u.count > 1 {
            u.count as f64 / (u.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            let m = self.running_mean[c].as_f64();
            let v = self.running_var[c].as_f64();
            self.running_mean[c] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * m + BN_MOMENTUM * u.mean[c]);
            self.running_var[c] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * v + BN_MOMENTUM * u.var[c] * unbias);
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// `ReLU(BN(conv3×3(x)))`.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(init: &mut Init<'_>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        ConvBlock {
            conv: Conv2d::new(init, &format!("{name}.conv"), in_ch, out_ch, 3),
            bn: BatchNorm2d::new(init, &format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, y, ctx)?;
        Ok(tape.relu(y))
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}
