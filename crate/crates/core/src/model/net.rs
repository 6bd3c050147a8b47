use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::{ParamIds, ParamStore, Parameter};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::attention::{Csam, Raam};
use super::config::ModelConfig;
use super::layers::{BatchNorm2d, BnUpdate, Conv2d, ConvBlock, ConvTranspose2d, Ctx, Init};

/// Smallest accepted input edge.
pub const MIN_INPUT_SIZE: usize = 32;

/// The four encoder outputs, finest first.
#[derive(Clone, Debug)]
pub struct EncoderFeatures<T> {
    pub blocks: [Tensor<T>; 4],
}

/// Tape handles for every stage of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub encoder: [Var; 4],
    pub decoder: [Var; 4],
    pub logits: Var,
    pub mask: Var,
}

/// The assembled segmentation network.
#[derive(Clone, Debug)]
pub struct EuisNet<T> {
    pub config: ModelConfig,
    pub encoder: Vec<ConvBlock<T>>,
    /// One region-aware attention per encoder block.
    pub raam: Vec<Raam<T>>,
    pub csam: Csam<T>,
    /// Upsamples the attention-refined bottleneck into `B_D^1`.
    pub bottleneck_up: ConvTranspose2d<T>,
    /// Conv blocks applied to `B_D^1..B_D^3` before upsampling.
    pub decoder_blocks: Vec<ConvBlock<T>>,
    pub decoder_up: Vec<ConvTranspose2d<T>>,
    /// Upsample the deeper attention skip for aggregation into `B_D^2..B_D^4`.
    pub skip_up: Vec<ConvTranspose2d<T>>,
    /// 1×1 mask head.
    pub head: Conv2d<T>,
}

impl<T: Scalar> EuisNet<T> {
    /// Builds a freshly initialized network from a seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(config, &mut rng)
    }

    /// He-uniform conv weights, zero biases, unit gamma, zero beta.
    pub fn init(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            ids: ParamIds::default(),
            rng,
        };
        let enc = config.encoder_widths();
        let dec = config.decoder_widths;

        let mut encoder = Vec::with_capacity(4);
        let mut in_ch = config.in_channels;
        for (i, &w) in enc.iter().enumerate() {
            encoder.push(ConvBlock::new(&mut init, &format!("encoder.{}", i + 1), in_ch, w));
            in_ch = w;
        }
        let raam = enc
            .iter()
            .enumerate()
            .map(|(i, &w)| Raam::new(&mut init, &format!("raam.{}", i + 1), w))
            .collect();
        let csam = Csam::new(&mut init, "csam", enc[3]);
        let bottleneck_up = ConvTranspose2d::new(&mut init, "decoder.1.up", enc[3], dec[0]);

        let mut decoder_blocks = Vec::with_capacity(3);
        let mut decoder_up = Vec::with_capacity(3);
        let mut skip_up = Vec::with_capacity(3);
        for i in 1..4 {
            let stage = i + 1;
            let in_ch = config.decoder_output_channels(i - 1);
            decoder_blocks.push(ConvBlock::new(
                &mut init,
                &format!("decoder.{stage}.block"),
                in_ch,
                dec[i - 1],
            ));
            decoder_up.push(ConvTranspose2d::new(
                &mut init,
                &format!("decoder.{stage}.up"),
                dec[i - 1],
                dec[i],
            ));
            skip_up.push(ConvTranspose2d::new(
                &mut init,
                &format!("decoder.{stage}.skip_up"),
                enc[4 - i],
                enc[3 - i],
            ));
        }
        let head = Conv2d::new(
            &mut init,
            "head",
            config.decoder_output_channels(3),
            config.out_channels,
            1,
        );

        Ok(EuisNet {
            config,
            encoder,
            raam,
            csam,
            bottleneck_up,
            decoder_blocks,
            decoder_up,
            skip_up,
            head,
        })
    }

    /// Checks an input shape against the configuration.
    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {s}",
                self.config.in_channels
            )));
        }
        for (dim, len) in [("height", s.h), ("width", s.w)] {
            if len < MIN_INPUT_SIZE || len % 16 != 0 {
                return Err(Error::Shape(format!(
                    "input {dim} {len} must be a multiple of 16 and at least {MIN_INPUT_SIZE}"
                )));
            }
        }
        Ok(())
    }

    /// `B_E^1 = CB(x)`, then `B_E^{i+1} = CB(dropout(maxpool(B_E^i)))`.
    pub fn encode(&self, tape: &mut Tape<T>, x: Var, ctx: &mut Ctx<'_>) -> Result<[Var; 4]> {
        let rate = self.config.dropout_rate;
        let mut out = Vec::with_capacity(4);
        let mut h = self.encoder[0].forward(tape, x, ctx)?;
        out.push(h);
        for block in &self.encoder[1..] {
            let p = tape.max_pool2(h);
            let d = tape.dropout(p, rate, ctx.mode, ctx.rng)?;
            h = block.forward(tape, d, ctx)?;
            out.push(h);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    /// Decoder with region-aware skips and skip aggregation; returns
    /// `B_D^1..B_D^4`.
    pub fn decode(&self, tape: &mut Tape<T>, enc: [Var; 4], ctx: &mut Ctx<'_>) -> Result<[Var; 4]> {
        let rate = self.config.dropout_rate;
        let mut skips = Vec::with_capacity(4);
        for (raam, &e) in self.raam.iter().zip(&enc) {
            skips.push(raam.forward(tape, e, ctx)?);
        }

        let p = tape.max_pool2(enc[3]);
        let d = tape.dropout(p, rate, ctx.mode, ctx.rng)?;
        let a = self.csam.forward(tape, d)?;
        let up = self.bottleneck_up.forward(tape, a)?;
        let mut current = tape.concat_channels(&[up, skips[3]])?;
        let mut out = vec![current];

        for i in 0..3 {
            let level = 2 - i;
            let d = tape.dropout(current, rate, ctx.mode, ctx.rng)?;
            let h = self.decoder_blocks[i].forward(tape, d, ctx)?;
            let up = self.decoder_up[i].forward(tape, h)?;
            let deeper = self.skip_up[i].forward(tape, skips[level + 1])?;
            current = tape.concat_channels(&[up, skips[level], deeper])?;
            out.push(current);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    /// Full pass: encoder, decoder, `sigmoid(conv1×1(B_D^4))`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut Ctx<'_>) -> Result<ForwardVars> {
        self.check_input(tape.value(x))?;
        let encoder = self.encode(tape, x, ctx)?;
        let decoder = self.decode(tape, encoder, ctx)?;
        let logits = self.head.forward(tape, decoder[3])?;
        let mask = tape.sigmoid(logits);
        Ok(ForwardVars {
            encoder,
            decoder,
            logits,
            mask,
        })
    }

    /// Inference-mode encoder features.
    pub fn encoder_features(&self, x: &Tensor<T>) -> Result<EncoderFeatures<T>> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(Mode::Infer, &mut rng);
        let xv = tape.constant(x.clone());
        let e = self.encode(&mut tape, xv, &mut ctx)?;
        Ok(EncoderFeatures {
            blocks: e.map(|v| tape.value(v).clone()),
        })
    }

    /// Inference-mode mask probabilities, `N×out×H×W` in `(0, 1)`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(Mode::Infer, &mut rng);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, &mut ctx)?;
        Ok(tape.value(out.mask).clone())
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        let mut v: Vec<&BatchNorm2d<T>> = self.encoder.iter().map(|b| &b.bn).collect();
        v.extend(self.raam.iter().map(|r| &r.block.bn));
        v.extend(self.decoder_blocks.iter().map(|b| &b.bn));
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut v: Vec<&mut BatchNorm2d<T>> = self.encoder.iter_mut().map(|b| &mut b.bn).collect();
        v.extend(self.raam.iter_mut().map(|r| &mut r.block.bn));
        v.extend(self.decoder_blocks.iter_mut().map(|b| &mut b.bn));
        v
    }

    /// Folds the batch statistics gathered in a training pass into the
    /// running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            let bn = self
                .batch_norms_mut()
                .into_iter()
                .find(|bn| bn.gamma.id == u.gamma)
                .ok_or_else(|| Error::Shape(format!("no batch-norm layer owns parameter {}", u.gamma)))?;
            bn.apply_update(u)?;
        }
        Ok(())
    }

    /// Copies the network into another precision.
    pub fn cast<U: Scalar>(&self) -> EuisNet<U> {
        fn p<T: Scalar, U: Scalar>(p: &Parameter<T>) -> Parameter<U> {
            let mut q = Parameter::new(p.id, p.name.clone(), p.value.cast());
            q.grad = p.grad.cast();
            q
        }
        fn conv<T: Scalar, U: Scalar>(c: &Conv2d<T>) -> Conv2d<U> {
            Conv2d {
                weight: p(&c.weight),
                bias: p(&c.bias),
            }
        }
        fn up<T: Scalar, U: Scalar>(c: &ConvTranspose2d<T>) -> ConvTranspose2d<U> {
            ConvTranspose2d {
                weight: p(&c.weight),
                bias: p(&c.bias),
            }
        }
        fn block<T: Scalar, U: Scalar>(b: &ConvBlock<T>) -> ConvBlock<U> {
            let cv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
            ConvBlock {
                conv: conv(&b.conv),
                bn: BatchNorm2d {
                    gamma: p(&b.bn.gamma),
                    beta: p(&b.bn.beta),
                    running_mean: cv(&b.bn.running_mean),
                    running_var: cv(&b.bn.running_var),
                },
            }
        }
        use super::attention::{ChannelAttention, SpatialAttention};
        EuisNet {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(block).collect(),
            raam: self.raam.iter().map(|r| Raam { block: block(&r.block) }).collect(),
            csam: Csam {
                channel: ChannelAttention {
                    squeeze: conv(&self.csam.channel.squeeze),
                    excite: conv(&self.csam.channel.excite),
                },
                spatial: SpatialAttention {
                    conv: conv(&self.csam.spatial.conv),
                },
            },
            bottleneck_up: up(&self.bottleneck_up),
            decoder_blocks: self.decoder_blocks.iter().map(block).collect(),
            decoder_up: self.decoder_up.iter().map(up).collect(),
            skip_up: self.skip_up.iter().map(up).collect(),
            head: conv(&self.head),
        }
    }
}

impl<T: Scalar> ParamStore<T> for EuisNet<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        for b in &self.encoder {
            v.extend(b.params());
        }
        for r in &self.raam {
            v.extend(r.params());
        }
        v.extend(self.csam.params());
        v.extend(self.bottleneck_up.params());
        for i in 0..3 {
            v.extend(self.decoder_blocks[i].params());
            v.extend(self.decoder_up[i].params());
            v.extend(self.skip_up[i].params());
        }
        v.extend(self.head.params());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = Vec::new();
        for b in &mut self.encoder {
            v.extend(b.params_mut());
        }
        for r in &mut self.raam {
            v.extend(r.params_mut());
        }
        v.extend(self.csam.params_mut());
        v.extend(self.bottleneck_up.params_mut());
        for ((b, u), s) in self
            .decoder_blocks
            .iter_mut()
            .zip(&mut self.decoder_up)
            .zip(&mut self.skip_up)
        {
            v.extend(b.params_mut());
            v.extend(u.params_mut());
            v.extend(s.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}
