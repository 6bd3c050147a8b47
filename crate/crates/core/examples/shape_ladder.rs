//! Prints the feature shapes of one forward pass at 256×256 and the size of
//! the default network.

use euisnet::model::Ctx;
use euisnet::{EuisNet, Mode, ModelConfig, ParamStore, Shape, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> euisnet::Result<()> {
    let width = std::env::args().nth(1).map_or(16, |a| a.parse().expect("base width"));
    let model = EuisNet::<f32>::new(ModelConfig::with_base_width(width), 0)?;
    let params: usize = model.parameters().iter().map(|p| p.numel()).sum();
    println!("base width {width}: {params} parameters");

    let x = Tensor::from_fn(Shape::new(1, 3, 256, 256), |_, c, h, w| {
        ((h * 7 + w * 3 + c) % 17) as f32 / 16.0
    });
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx::new(Mode::Infer, &mut rng);
    let xv = tape.constant(x);
    let out = model.forward(&mut tape, xv, &mut ctx)?;

    for (i, v) in out.encoder.iter().enumerate() {
        println!("encoder {}: {}", i + 1, tape.shape(*v));
    }
    for (i, v) in out.decoder.iter().enumerate() {
        println!("decoder {}: {}", i + 1, tape.shape(*v));
    }
    let mask = tape.value(out.mask);
    let (lo, hi) = mask
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!("mask: {}  range [{lo:.4}, {hi:.4}]", mask.shape());
    Ok(())
}
