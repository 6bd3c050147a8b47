use euisnet::model::{ChannelAttention, Csam, Ctx, Init, Raam};
use euisnet::param::ParamIds;
use euisnet::{EuisNet, Mode, ModelConfig, ParamStore, Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Plain-loop reference implementations.
mod naive {
    use euisnet::{Shape, Tensor};

    pub fn conv3x3(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let out = w.shape().n;
        Tensor::from_fn(Shape::new(s.n, out, s.h, s.w), |n, o, i, j| {
            let mut acc = b.data()[o];
            for c in 0..s.c {
                for ki in 0..3 {
                    for kj in 0..3 {
                        let (r, q) = (i as isize + ki as isize - 1, j as isize + kj as isize - 1);
                        if r >= 0 && q >= 0 && (r as usize) < s.h && (q as usize) < s.w {
                            acc += w.at(o, c, ki, kj) * x.at(n, c, r as usize, q as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    pub fn batch_norm_relu(x: &Tensor<f64>, gamma: &[f64], beta: &[f64]) -> Tensor<f64> {
        let s = x.shape();
        let count = (s.n * s.h * s.w) as f64;
        let mut mean = vec![0.0; s.c];
        let mut var = vec![0.0; s.c];
        for c in 0..s.c {
            for n in 0..s.n {
                for i in 0..s.h {
                    for j in 0..s.w {
                        mean[c] += x.at(n, c, i, j) / count;
                    }
                }
            }
            for n in 0..s.n {
                for i in 0..s.h {
                    for j in 0..s.w {
                        var[c] += (x.at(n, c, i, j) - mean[c]).powi(2) / count;
                    }
                }
            }
        }
        Tensor::from_fn(s, |n, c, i, j| {
            let y = gamma[c] * (x.at(n, c, i, j) - mean[c]) / (var[c] + 1e-5).sqrt() + beta[c];
            y.max(0.0)
        })
    }

    pub fn gap(x: &Tensor<f64>, n: usize, c: usize) -> f64 {
        let s = x.shape();
        let mut acc = 0.0;
        for i in 0..s.h {
            for j in 0..s.w {
                acc += x.at(n, c, i, j);
            }
        }
        acc / (s.h * s.w) as f64
    }

    pub fn gmp(x: &Tensor<f64>, n: usize, c: usize) -> f64 {
        let s = x.shape();
        let mut best = f64::NEG_INFINITY;
        for i in 0..s.h {
            for j in 0..s.w {
                best = best.max(x.at(n, c, i, j));
            }
        }
        best
    }

    pub fn max_pool2(x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        Tensor::from_fn(Shape::new(s.n, s.c, s.h.div_ceil(2), s.w.div_ceil(2)), |n, c, i, j| {
            let mut best = f64::NEG_INFINITY;
            for r in 2 * i..(2 * i + 2).min(s.h) {
                for q in 2 * j..(2 * j + 2).min(s.w) {
                    best = best.max(x.at(n, c, r, q));
                }
            }
            best
        })
    }

    pub fn channel_mean(x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, i, j| {
            (0..s.c).map(|c| x.at(n, c, i, j)).sum::<f64>() / s.c as f64
        })
    }
}

fn init(rng: &mut ChaCha8Rng) -> Init<'_> {
    Init {
        ids: ParamIds::default(),
        rng,
    }
}

fn run<R>(f: impl FnOnce(&mut Tape<f64>, &mut Ctx<'_>) -> R) -> R {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(Mode::Train, &mut rng);
    f(&mut tape, &mut ctx)
}

#[test]
fn region_attention_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut raam: Raam<f64> = Raam::new(&mut init(&mut rng), "raam", 3);
    raam.block.bn.gamma.value = random(Shape::new(1, 3, 1, 1), &mut rng);
    raam.block.bn.beta.value = random(Shape::new(1, 3, 1, 1), &mut rng).map(|v| v + 1.0);
    raam.block.conv.bias.value = random(Shape::new(1, 3, 1, 1), &mut rng);
    let x = random(Shape::new(2, 3, 6, 5), &mut rng);

    let got = run(|tape, ctx| {
        let xv = tape.constant(x.clone());
        let y = raam.forward(tape, xv, ctx).unwrap();
        tape.value(y).clone()
    });

    let conv = naive::conv3x3(&x, &raam.block.conv.weight.value, &raam.block.conv.bias.value);
    let f = naive::batch_norm_relu(&conv, raam.block.bn.gamma.value.data(), raam.block.bn.beta.value.data());
    let pooled = naive::max_pool2(&f);
    let cca = naive::channel_mean(&f);
    let want = Tensor::from_fn(x.shape(), |n, c, i, j| {
        let i1 = naive::gap(&f, n, c);
        let i2 = naive::gap(&pooled, n, c);
        cca.at(n, 0, i, j) * i1 * i2 * x.at(n, c, i, j)
    });
    assert!(got.max_abs_diff(&want) < 1e-12, "diff {}", got.max_abs_diff(&want));
}

#[test]
fn bottleneck_attention_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut csam: Csam<f64> = Csam::new(&mut init(&mut rng), "csam", 4);
    for conv in [
        &mut csam.channel.squeeze,
        &mut csam.channel.excite,
        &mut csam.spatial.conv,
    ] {
        let c = conv.bias.value.shape();
        conv.bias.value = random(c, &mut rng);
    }
    let e = random(Shape::new(2, 4, 4, 4), &mut rng);

    let got = run(|tape, _| {
        let ev = tape.constant(e.clone());
        let y = csam.forward(tape, ev).unwrap();
        tape.value(y).clone()
    });

    // The inner convolutions act on 1×1 descriptors, so only the centre tap
    // of each 3×3 kernel contributes.
    let sq = &csam.channel.squeeze;
    let ex = &csam.channel.excite;
    let ca = Tensor::from_fn(e.shape(), |n, c, i, j| {
        let d: Vec<f64> = (0..4).map(|k| naive::gap(&e, n, k) + naive::gmp(&e, n, k)).collect();
        let h: Vec<f64> = (0..4)
            .map(|o| {
                (sq.bias.value.data()[o] + (0..4).map(|k| sq.weight.value.at(o, k, 1, 1) * d[k]).sum::<f64>()).max(0.0)
            })
            .collect();
        let gate = ex.bias.value.data()[c] + (0..4).map(|k| ex.weight.value.at(c, k, 1, 1) * h[k]).sum::<f64>();
        e.at(n, c, i, j) * gate
    });
    let m = naive::conv3x3(
        &naive::channel_mean(&ca),
        &csam.spatial.conv.weight.value,
        &csam.spatial.conv.bias.value,
    );
    let want = Tensor::from_fn(e.shape(), |n, c, i, j| {
        ca.at(n, c, i, j) * m.at(n, 0, i, j).max(0.0) + e.at(n, c, i, j)
    });
    assert!(got.max_abs_diff(&want) < 1e-12, "diff {}", got.max_abs_diff(&want));
}

#[test]
fn attention_modules_keep_shape_and_map_zero_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (c, h, w) in [(1, 2, 2), (4, 8, 8), (3, 5, 7), (8, 16, 16)] {
        let mut i = init(&mut rng);
        let raam: Raam<f64> = Raam::new(&mut i, "r", c);
        let csam: Csam<f64> = Csam::new(&mut i, "c", c);
        let ca: ChannelAttention<f64> = ChannelAttention::new(&mut i, "a", c);
        let x = random(Shape::new(2, c, h, w), &mut rng);
        let zero = Tensor::zeros(Shape::new(2, c, h, w));
        run(|tape, ctx| {
            let xv = tape.constant(x.clone());
            let zv = tape.constant(zero.clone());
            let r = raam.forward(tape, xv, ctx).unwrap();
            let s = csam.forward(tape, xv).unwrap();
            assert_eq!(tape.shape(r), x.shape());
            assert_eq!(tape.shape(s), x.shape());
            let r0 = raam.forward(tape, zv, ctx).unwrap();
            let a0 = ca.forward(tape, zv).unwrap();
            assert!(tape.value(r0).data().iter().all(|&v| v == 0.0));
            assert!(tape.value(a0).data().iter().all(|&v| v == 0.0));
        });
    }
}

#[test]
fn shape_ladder_at_256() {
    let model = EuisNet::<f32>::new(ModelConfig::default(), 0).unwrap();
    let x = Tensor::from_fn(Shape::new(1, 3, 256, 256), |_, c, h, w| {
        ((h + 2 * w + c) % 13) as f32 / 12.0
    });
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(Mode::Infer, &mut rng);
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, xv, &mut ctx).unwrap();
    let enc: Vec<Shape> = out.encoder.iter().map(|v| tape.shape(*v)).collect();
    assert_eq!(
        enc,
        vec![
            Shape::new(1, 16, 256, 256),
            Shape::new(1, 32, 128, 128),
            Shape::new(1, 64, 64, 64),
            Shape::new(1, 128, 32, 32),
        ]
    );
    let dec: Vec<(usize, usize)> = out
        .decoder
        .iter()
        .map(|v| (tape.shape(*v).h, tape.shape(*v).w))
        .collect();
    assert_eq!(dec, vec![(32, 32), (64, 64), (128, 128), (256, 256)]);
    let mask = tape.value(out.mask);
    assert_eq!(mask.shape(), Shape::new(1, 1, 256, 256));
    assert!(mask.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn parameter_count_matches_layer_bookkeeping() {
    let conv = |i: usize, o: usize, k: usize| k * k * i * o + o;
    let block = |i: usize, o: usize| conv(i, o, 3) + 2 * o;
    for w in [4usize, 8, 16] {
        let mut expected = block(3, w) + block(w, 2 * w) + block(2 * w, 4 * w) + block(4 * w, 8 * w);
        expected += block(w, w) + block(2 * w, 2 * w) + block(4 * w, 4 * w) + block(8 * w, 8 * w);
        expected += 2 * conv(8 * w, 8 * w, 3) + conv(1, 1, 3);
        expected += conv(8 * w, 8 * w, 3);
        // Decoder inputs: upsampled path plus one or two attention skips.
        expected += block(8 * w + 8 * w, 8 * w) + conv(8 * w, 4 * w, 3) + conv(8 * w, 4 * w, 3);
        expected += block(4 * w + 4 * w + 4 * w, 4 * w) + conv(4 * w, 2 * w, 3) + conv(4 * w, 2 * w, 3);
        expected += block(2 * w + 2 * w + 2 * w, 2 * w) + conv(2 * w, w, 3) + conv(2 * w, w, 3);
        expected += conv(w + w + w, 1, 1);
        let model = EuisNet::<f32>::new(ModelConfig::with_base_width(w), 0).unwrap();
        assert_eq!(model.num_parameters(), expected, "base width {w}");
    }
}

#[test]
fn inference_ignores_the_dropout_generator() {
    let model = EuisNet::<f64>::new(ModelConfig::with_base_width(4), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(2, 3, 32, 32), &mut rng);
    let infer = |seed: u64| {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = Ctx::new(Mode::Infer, &mut rng);
        let xv = tape.constant(x.clone());
        let out = model.forward(&mut tape, xv, &mut ctx).unwrap();
        tape.value(out.mask).clone()
    };
    let a = infer(1);
    assert_eq!(a, infer(12345));
    assert_eq!(a, model.predict(&x).unwrap());
}

#[test]
fn same_seed_gives_identical_initialization() {
    let bits = |seed| {
        EuisNet::<f32>::new(ModelConfig::with_base_width(8), seed)
            .unwrap()
            .parameters()
            .iter()
            .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(4), bits(4));
    assert_ne!(bits(4), bits(5));
}

#[test]
fn rejects_inputs_the_ladder_cannot_halve() {
    let model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 0).unwrap();
    for (c, h, w) in [(1, 32, 32), (3, 24, 32), (3, 40, 32), (3, 16, 16)] {
        assert!(
            model.predict(&Tensor::zeros(Shape::new(1, c, h, w))).is_err(),
            "{c}×{h}×{w}"
        );
    }
}
