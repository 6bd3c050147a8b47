use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use euisnet::commands::{self, GradCheckScale, PredictOptions};
use euisnet::config::RunConfig;
use euisnet::data::Layout;
use euisnet::Error;

#[derive(Parser)]
#[command(name = "euisnet", version, about = "Ultrasound image segmentation with EUIS-Net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, resize, augment and split a dataset into a manifest.
    Prepare {
        /// Dataset root directory.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Directory layout: busi, ddti, mc or generic.
        #[arg(long)]
        layout: Option<String>,
        /// Generate this many synthetic samples instead of reading a dataset.
        #[arg(long, conflicts_with = "root")]
        synthetic: Option<usize>,
        /// Replace an existing manifest.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per fold and evaluate it on the test split.
    Train {
        /// Manifest written by `prepare`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Print the resolved configuration and parameter count only.
        #[arg(long)]
        dry_run: bool,
        /// Suppress per-epoch progress.
        #[arg(long, short)]
        quiet: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score checkpoints on their test splits.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint files (repeatable).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Run directory whose fold*_best.ckpt files are evaluated.
        #[arg(long, conflicts_with = "checkpoints")]
        run: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write predicted masks for PNG images (files or directories).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the probability map.
        #[arg(long)]
        prob: bool,
        /// Also write the input with the mask outline.
        #[arg(long)]
        overlay: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(value_enum, default_value = "tiny")]
        scale: Scale,
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Tiny,
    Block,
}

fn resolve(common: &Common) -> euisnet::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        if !path.is_file() {
            return Err(Error::Usage(format!("config file {} not found", path.display())));
        }
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> euisnet::Result<bool> {
    match cli.command {
        Command::Prepare {
            root,
            layout,
            synthetic,
            force,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(root) = root {
                cfg.dataset_root = Some(root);
            }
            if let Some(layout) = layout {
                cfg.layout = layout.parse::<Layout>()?;
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("prepared"));
            let summary = commands::prepare(&cfg, synthetic, &out, force)?;
            print!("{}", summary.report());
            Ok(true)
        }
        Command::Train {
            manifest,
            dry_run,
            quiet,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            if dry_run {
                print!("{}", commands::dry_run(&cfg)?);
                return Ok(true);
            }
            let summary = commands::train(&cfg, !quiet)?;
            for (fold, o) in &summary.folds {
                println!(
                    "fold {fold}: {} epochs, best val Dice {:.4} at epoch {}{}",
                    o.log.records.len(),
                    o.best_val_dice,
                    o.best_epoch,
                    if o.stopped_early { " (early stop)" } else { "" }
                );
            }
            print!("{}", summary.report.summary_table());
            println!("run directory: {}", summary.run_dir.display());
            Ok(true)
        }
        Command::Eval {
            manifest,
            checkpoints,
            run,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            let checkpoints = match run {
                Some(dir) => commands::run_checkpoints(&dir)?,
                None => checkpoints,
            };
            let out = match &common.out {
                Some(o) => o.clone(),
                None => commands::fresh_run_dir(Path::new("runs"), "eval")?,
            };
            let report = commands::eval(&cfg, &checkpoints, &out)?;
            print!("{}", report.summary_table());
            println!("metrics: {}", out.join(commands::METRICS_NAME).display());
            Ok(true)
        }
        Command::Predict {
            checkpoint,
            prob,
            overlay,
            inputs,
            common,
        } => {
            let cfg = resolve(&common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("predictions"));
            let opts = PredictOptions {
                probability: prob,
                overlay,
                image_size: cfg.image_size,
            };
            for p in commands::predict(&checkpoint, &inputs, &out, opts)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Gradcheck {
            scale,
            inject_fault,
            common,
        } => {
            let cfg = resolve(&common)?;
            let scale = match scale {
                Scale::Tiny => GradCheckScale::Tiny,
                Scale::Block => GradCheckScale::Block,
            };
            let report = commands::gradcheck(scale, cfg.train.seed, inject_fault)?;
            print!("{}", commands::gradcheck_table(&report));
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
