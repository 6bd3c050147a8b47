//! Writes a synthetic dataset as PNG files, then loads, augments and splits
//! it into a manifest, as `euisnet prepare --synthetic` does.
//!
//!     cargo run --release --example prepare_synthetic [-- OUT_DIR]

use std::path::PathBuf;

use euisnet::commands::prepare;
use euisnet::config::RunConfig;
use euisnet::data::{read_manifest, Split};

fn main() -> euisnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("euisnet-prepared"), PathBuf::from);
    let mut cfg = RunConfig::default();
    cfg.image_size = 64;
    let summary = prepare(&cfg, Some(40), &out, true)?;
    print!("{}", summary.report());

    let m = read_manifest(&summary.manifest)?;
    let plan = m.holdout_plan()?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let entries = m.entries_for(&plan, split);
        let augmented = entries
            .iter()
            .filter(|&&i| !m.entries[i].provenance.is_original())
            .count();
        println!("{split}: {} entries, {augmented} augmented", entries.len());
    }
    for fold in 0..cfg.folds {
        let plan = m.kfold_plan(fold, cfg.train.seed)?;
        println!(
            "fold {fold}: train {} / val {} / test {}",
            plan.count(Split::Train),
            plan.count(Split::Val),
            plan.count(Split::Test)
        );
    }
    Ok(())
}
