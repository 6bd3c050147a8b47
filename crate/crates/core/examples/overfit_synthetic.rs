//! Fits a small network to eight synthetic images until its Dice on those
//! same images reaches 0.95.
//!
//!     cargo run --release --example overfit_synthetic [-- EPOCHS]

use std::time::Instant;

use euisnet::data::{synth_dataset, IMAGE_SIZE};
use euisnet::train::{evaluate, train_loop, RunOptions, TrainConfig};
use euisnet::{EuisNet, ModelConfig};

fn main() -> euisnet::Result<()> {
    let max_epochs = std::env::args().nth(1).map_or(200, |a| a.parse().expect("epoch count"));
    let m = synth_dataset(8, IMAGE_SIZE, 7);
    let all: Vec<usize> = (0..m.len()).collect();

    let mut model = EuisNet::<f32>::new(ModelConfig::with_base_width(8), 0)?;
    let cfg = TrainConfig {
        max_epochs,
        early_stop_patience: max_epochs,
        target_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let opts = RunOptions {
        verbose: true,
        ..RunOptions::default()
    };

    let start = Instant::now();
    let outcome = train_loop(&mut model, &m, &all, &all, &cfg, &opts)?;
    let report = evaluate(&model, &m, &all, 0, cfg.batch_size)?;
    println!(
        "{} epochs in {:.1}s, train Dice {:.4}",
        outcome.log.records.len(),
        start.elapsed().as_secs_f64(),
        report.overall.mean.dice
    );
    Ok(())
}
