//! Saves a network, loads it back and compares predictions bit for bit.

use euisnet::model::{load_checkpoint, save_checkpoint};
use euisnet::{EuisNet, ModelConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> euisnet::Result<()> {
    let model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 11)?;
    let path = std::env::temp_dir().join("euisnet-roundtrip.ckpt");
    save_checkpoint(&path, &model, None)?;
    let (loaded, _) = load_checkpoint::<f32>(&path)?;
    println!(
        "{} ({} bytes)",
        path.display(),
        std::fs::metadata(&path).map_or(0, |m| m.len())
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..5 {
        let x = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, _, _, _| rng.random::<f32>());
        let a = model.predict(&x)?;
        let b = loaded.predict(&x)?;
        let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        println!("input {i}: identical = {same}");
    }
    Ok(())
}
