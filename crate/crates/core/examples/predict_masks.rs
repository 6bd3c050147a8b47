//! Trains briefly on synthetic data, then writes mask, probability and
//! overlay PNGs for a few images, as `euisnet predict` does.
//!
//!     cargo run --release --example predict_masks [-- OUT_DIR]

use std::path::PathBuf;

use euisnet::commands::{predict, write_synthetic, PredictOptions};
use euisnet::data::synth_dataset;
use euisnet::model::save_checkpoint;
use euisnet::train::{train_loop, RunOptions, TrainConfig};
use euisnet::{EuisNet, ModelConfig};

fn main() -> euisnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("euisnet-predict"), PathBuf::from);
    let size = 64;
    let m = synth_dataset(8, size, 3);
    let all: Vec<usize> = (0..m.len()).collect();
    let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(4), 0)?;
    let cfg = TrainConfig {
        max_epochs: 15,
        ..TrainConfig::default()
    };
    train_loop(&mut model, &m, &all, &all, &cfg, &RunOptions::default())?;
    let ckpt = out.join("model.ckpt");
    std::fs::create_dir_all(&out).map_err(|e| euisnet::Error::io(&out, e))?;
    save_checkpoint(&ckpt, &model, None)?;

    let inputs = out.join("inputs");
    write_synthetic(&inputs, 3, size, 3)?;
    let opts = PredictOptions {
        probability: true,
        overlay: true,
        image_size: size,
    };
    for p in predict(&ckpt, &[inputs.join("images")], &out.join("predictions"), opts)? {
        println!("{}", p.display());
    }
    Ok(())
}
