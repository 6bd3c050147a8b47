//! Ready-made gradient-check suites: every differentiable kernel on small
//! random inputs, and the complete network at `1×3×32×32`.
//!
//! Losses are random-weighted means `(1/N) Σ rᵢ·yᵢ` with `rᵢ ~ U(-1, 1)`,
//! which give every output element a non-trivial gradient while keeping the
//! loss, and with it the round-off in the difference quotient, small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ConvBlock, Csam, Ctx, EuisNet, Init, ModelConfig, Raam};
use crate::param::{ParamIds, ParamList, ParamStore, Parameter};
use crate::tape::{Mode, NormStats, Tape, Var};
use crate::tensor::{Shape, Tensor};

use super::{gradient_check_with, GradCheckOptions, GradCheckReport};

/// Input size of the tiny full-model check.
pub const TINY_INPUT: usize = 32;
/// Base width of the tiny full-model check.
pub const TINY_BASE_WIDTH: usize = 4;

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// `mean(r ⊙ y)` with `r` drawn from a generator seeded by `seed`.
pub fn weighted_mean(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.mean(p))
}

fn prefixed(mut report: GradCheckReport, prefix: &str) -> GradCheckReport {
    for g in &mut report.groups {
        g.name = format!("{prefix}/{}", g.name);
    }
    report
}

fn merge(into: &mut Option<GradCheckReport>, r: GradCheckReport) {
    match into {
        Some(acc) => acc.groups.extend(r.groups),
        None => *into = Some(r),
    }
}

/// A module plus an input tensor treated as a parameter, so the input
/// gradient is checked alongside the weights.
struct WithInput<M> {
    module: M,
    x: Parameter<f64>,
    params: for<'a> fn(&'a M) -> Vec<&'a Parameter<f64>>,
    params_mut: for<'a> fn(&'a mut M) -> Vec<&'a mut Parameter<f64>>,
}

impl<M> ParamStore<f64> for WithInput<M> {
    fn parameters(&self) -> Vec<&Parameter<f64>> {
        let mut v = vec![&self.x];
        v.extend((self.params)(&self.module));
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        let mut v = vec![&mut self.x];
        v.extend((self.params_mut)(&mut self.module));
        v
    }
}

fn module_case<M>(
    name: &str,
    seed: u64,
    shape: Shape,
    build: impl FnOnce(&mut Init<'_>) -> M,
    params: for<'a> fn(&'a M) -> Vec<&'a Parameter<f64>>,
    params_mut: for<'a> fn(&'a mut M) -> Vec<&'a mut Parameter<f64>>,
    forward: impl Fn(&M, &mut Tape<f64>, Var, &mut Ctx<'_>) -> Result<Var>,
    opts: &GradCheckOptions,
    fault: bool,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(shape, -1.0, 1.0, &mut rng);
    let mut init = Init {
        ids: ParamIds::default(),
        rng: &mut rng,
    };
    let module = build(&mut init);
    let x = Parameter::new(init.ids.next_id(), "x", x);
    let mut store = WithInput {
        module,
        x,
        params,
        params_mut,
    };
    let mut f = |s: &WithInput<M>, tape: &mut Tape<f64>| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut ctx = Ctx::new(Mode::Train, &mut drop_rng);
        let x = tape.param(&s.x);
        let y = forward(&s.module, tape, x, &mut ctx)?;
        weighted_mean(tape, y, seed ^ 2)
    };
    Ok(prefixed(gradient_check_with(&mut store, &mut f, opts, fault)?, name))
}

fn list_case(
    name: &str,
    seed: u64,
    inputs: &[(&str, Shape)],
    forward: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    opts: &GradCheckOptions,
    fault: bool,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamList::new();
    for &(n, shape) in inputs {
        store.push(n, uniform(shape, -1.0, 1.0, &mut rng));
    }
    let mut f = |s: &ParamList<f64>, tape: &mut Tape<f64>| {
        let vars: Vec<Var> = s.params.iter().map(|p| tape.param(p)).collect();
        let y = forward(tape, &vars)?;
        if tape.shape(y).is_scalar() {
            Ok(y)
        } else {
            weighted_mean(tape, y, seed ^ 2)
        }
    };
    Ok(prefixed(gradient_check_with(&mut store, &mut f, opts, fault)?, name))
}

/// Checks every kernel and building block in isolation.
pub fn block_suite(opts: &GradCheckOptions, fault: bool) -> Result<GradCheckReport> {
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let seed = opts.seed;
    let mut all = None;
    let cases: Vec<GradCheckReport> = vec![
        list_case(
            "conv2d_3x3",
            seed + 1,
            &[("x", s(2, 3, 6, 5)), ("weight", s(4, 3, 3, 3)), ("bias", s(1, 4, 1, 1))],
            |t, v| t.conv2d(v[0], v[1], Some(v[2])),
            opts,
            fault,
        )?,
        list_case(
            "conv2d_1x1",
            seed + 2,
            &[("x", s(2, 3, 4, 4)), ("weight", s(2, 3, 1, 1)), ("bias", s(1, 2, 1, 1))],
            |t, v| t.conv2d(v[0], v[1], Some(v[2])),
            opts,
            fault,
        )?,
        list_case(
            "conv2d_strided",
            seed + 3,
            &[("x", s(1, 2, 7, 6)), ("weight", s(3, 2, 3, 3))],
            |t, v| t.conv2d_general(v[0], v[1], None, 2, 1),
            opts,
            fault,
        )?,
        list_case(
            "conv_transpose2d",
            seed + 4,
            &[("x", s(2, 3, 3, 4)), ("weight", s(3, 2, 3, 3)), ("bias", s(1, 2, 1, 1))],
            |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2])),
            opts,
            fault,
        )?,
        list_case(
            "batch_norm",
            seed + 5,
            &[("x", s(2, 3, 4, 3)), ("gamma", s(1, 3, 1, 1)), ("beta", s(1, 3, 1, 1))],
            |t, v| Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?.0),
            opts,
            fault,
        )?,
        list_case(
            "relu",
            seed + 6,
            &[("x", s(2, 2, 3, 3))],
            |t, v| Ok(t.relu(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "sigmoid",
            seed + 7,
            &[("x", s(2, 2, 3, 3))],
            |t, v| Ok(t.sigmoid(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "max_pool2",
            seed + 8,
            &[("x", s(2, 2, 5, 7))],
            |t, v| Ok(t.max_pool2(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "global_avg_pool",
            seed + 9,
            &[("x", s(2, 3, 4, 5))],
            |t, v| Ok(t.global_avg_pool(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "global_max_pool",
            seed + 10,
            &[("x", s(2, 3, 4, 5))],
            |t, v| Ok(t.global_max_pool(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "channel_mean",
            seed + 11,
            &[("x", s(2, 3, 4, 5))],
            |t, v| Ok(t.channel_mean(v[0])),
            opts,
            fault,
        )?,
        list_case(
            "broadcast_mul",
            seed + 12,
            &[("a", s(2, 3, 4, 4)), ("b", s(2, 1, 4, 4)), ("c", s(2, 3, 1, 1))],
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                t.mul(y, v[2])
            },
            opts,
            fault,
        )?,
        list_case(
            "broadcast_add",
            seed + 13,
            &[("a", s(2, 3, 4, 4)), ("b", s(2, 3, 1, 1))],
            |t, v| t.add(v[0], v[1]),
            opts,
            fault,
        )?,
        list_case(
            "concat_slice",
            seed + 14,
            &[("a", s(2, 2, 3, 3)), ("b", s(2, 3, 3, 3))],
            |t, v| {
                let c = t.concat_channels(&[v[0], v[1]])?;
                t.slice_channels(c, 1, 3)
            },
            opts,
            fault,
        )?,
        list_case(
            "dropout",
            seed + 15,
            &[("x", s(2, 3, 4, 4))],
            |t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                t.dropout(v[0], 0.3, Mode::Train, &mut rng)
            },
            opts,
            fault,
        )?,
        list_case(
            "bce",
            seed + 16,
            &[("logits", s(2, 1, 4, 4))],
            |t, v| {
                let p = t.sigmoid(v[0]);
                let target = Tensor::from_fn(t.shape(p), |n, _, h, w| ((n + h * 3 + w) % 2) as f64);
                t.bce(p, &target)
            },
            opts,
            fault,
        )?,
        list_case(
            "soft_dice",
            seed + 17,
            &[("logits", s(2, 1, 4, 4))],
            |t, v| {
                let p = t.sigmoid(v[0]);
                let target = Tensor::from_fn(t.shape(p), |n, _, h, w| ((n + h + w) % 3 == 0) as u8 as f64);
                t.soft_dice(p, &target, 1.0)
            },
            opts,
            fault,
        )?,
        module_case(
            "conv_block",
            seed + 18,
            s(2, 3, 5, 4),
            |init| ConvBlock::new(init, "cb", 3, 4),
            ConvBlock::params,
            ConvBlock::params_mut,
            |m, t, x, ctx| m.forward(t, x, ctx),
            opts,
            fault,
        )?,
        module_case(
            "raam",
            seed + 19,
            s(2, 3, 6, 6),
            |init| Raam::new(init, "raam", 3),
            Raam::params,
            Raam::params_mut,
            |m, t, x, ctx| m.forward(t, x, ctx),
            opts,
            fault,
        )?,
        module_case(
            "csam",
            seed + 20,
            s(2, 3, 5, 5),
            |init| Csam::new(init, "csam", 3),
            Csam::params,
            Csam::params_mut,
            |m, t, x, _| m.forward(t, x),
            opts,
            fault,
        )?,
    ];
    for c in cases {
        merge(&mut all, c);
    }
    Ok(all.expect("at least one case"))
}

/// Checks every parameter of a base-width-4 network on one `1×3×32×32`
/// input, in training mode with a fixed dropout pattern.
pub fn tiny_model_suite(opts: &GradCheckOptions, fault: bool) -> Result<GradCheckReport> {
    let seed = opts.seed;
    let mut model = EuisNet::<f64>::new(ModelConfig::with_base_width(TINY_BASE_WIDTH), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = uniform(Shape::new(1, 3, TINY_INPUT, TINY_INPUT), 0.0, 1.0, &mut rng);
    let mut f = |m: &EuisNet<f64>, tape: &mut Tape<f64>| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd40);
        let mut ctx = Ctx::new(Mode::Train, &mut drop_rng);
        let xv = tape.constant(x.clone());
        let out = m.forward(tape, xv, &mut ctx)?;
        weighted_mean(tape, out.mask, seed ^ 0x1055)
    };
    gradient_check_with(&mut model, &mut f, opts, fault)
}
