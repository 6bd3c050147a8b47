//! Attention modules: the region-aware skip attention and the bottleneck
//! channel/spatial attention.
//!
//! No gate carries a squashing nonlinearity beyond the ReLUs shown in the
//! module definitions; gates are plain products.

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

use super::layers::{Conv2d, ConvBlock, Ctx, Init};

/// Region-aware attention on a skip connection.
///
/// With `f = ReLU(BN(conv3×3(x)))`:
///
/// - `I₁ = maxpool(GAP(f))`: the pool acts on a `1×1` map and is the identity,
/// - `I₂ = GAP(maxpool(f))`,
/// - `y = CCA(f) · I₁ · I₂ · x`, broadcast as
///   `(N×1×H×W)·(N×C×1×1)·(N×C×1×1)·(N×C×H×W)`.
#[derive(Clone, Debug)]
pub struct Raam<T> {
    pub block: ConvBlock<T>,
}

impl<T: Scalar> Raam<T> {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        Raam {
            block: ConvBlock::new(init, &format!("{name}.block"), channels, channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
        let s = tape.shape(x);
        if s.h < 2 || s.w < 2 {
            return Err(Error::Shape(format!("region-aware attention needs H, W >= 2, got {s}")));
        }
        let f = self.block.forward(tape, x, ctx)?;
        let gap = tape.global_avg_pool(f);
        let i1 = tape.max_pool2(gap);
        let pooled = tape.max_pool2(f);
        let i2 = tape.global_avg_pool(pooled);
        let cca = tape.channel_mean(f);
        let y = tape.mul(cca, i1)?;
        let y = tape.mul(y, i2)?;
        tape.mul(y, x)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.block.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.block.params_mut()
    }
}

/// `e ⊗ conv3×3(ReLU(conv3×3(GAP(e) ⊕ GMP(e))))`.
///
/// The inner convolutions see `1×1` descriptors, where a zero-padded 3×3
/// kernel reduces to its centre tap.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    pub squeeze: Conv2d<T>,
    pub excite: Conv2d<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        ChannelAttention {
            squeeze: Conv2d::new(init, &format!("{name}.squeeze"), channels, channels, 3),
            excite: Conv2d::new(init, &format!("{name}.excite"), channels, channels, 3),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, e: Var) -> Result<Var> {
        let avg = tape.global_avg_pool(e);
        let max = tape.global_max_pool(e);
        let d = tape.add(avg, max)?;
        let h = self.squeeze.forward(tape, d)?;
        let h = tape.relu(h);
        let gate = self.excite.forward(tape, h)?;
        tape.mul(e, gate)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.squeeze.params();
        v.extend(self.excite.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.squeeze.params_mut();
        v.extend(self.excite.params_mut());
        v
    }
}

/// `ca ⊗ ReLU(conv3×3(channel_mean(ca)))`, the map broadcast over channels.
#[derive(Clone, Debug)]
pub struct SpatialAttention<T> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(init: &mut Init<'_>, name: &str) -> Self {
        SpatialAttention {
            conv: Conv2d::new(init, &format!("{name}.conv"), 1, 1, 3),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, ca: Var) -> Result<Var> {
        let pooled = tape.channel_mean(ca);
        let m = self.conv.forward(tape, pooled)?;
        let m = tape.relu(m);
        tape.mul(ca, m)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.conv.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.conv.params_mut()
    }
}

/// Channel attention, then spatial attention on its output, inside a
/// residual block: `e + SA(CA(e))`.
#[derive(Clone, Debug)]
pub struct Csam<T> {
    pub channel: ChannelAttention<T>,
    pub spatial: SpatialAttention<T>,
}

impl<T: Scalar> Csam<T> {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        Csam {
            channel: ChannelAttention::new(init, &format!("{name}.channel"), channels),
            spatial: SpatialAttention::new(init, &format!("{name}.spatial")),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, e: Var) -> Result<Var> {
        let ca = self.channel.forward(tape, e)?;
        let sa = self.spatial.forward(tape, ca)?;
        tape.add(sa, e)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.channel.params();
        v.extend(self.spatial.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.channel.params_mut();
        v.extend(self.spatial.params_mut());
        v
    }
}
