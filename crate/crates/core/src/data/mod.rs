//! Datasets: loading, resizing, augmentation, splitting and batching.

mod augment;
mod batch;
mod io;
mod manifest;
mod manifest_file;
mod resize;
mod sample;
mod synth;

pub use augment::{
    adjust_contrast, apply_augmentation, augment, augmented_id, flip_horizontal, flip_vertical, CONTRAST_HIGH,
    CONTRAST_LOW,
};
pub use batch::{batch_iter, Batch, BatchIter};
pub use io::{
    discover, load_dataset, load_pair, read_image, read_mask, read_merged_mask, write_gray_png, write_rgb_png, Layout,
    PairSpec, MASK_THRESHOLD,
};
pub use manifest::{apportion, validation_carve, DatasetManifest, Entry, Split, SplitPlan};
pub use manifest_file::{manifest_to_string, read_manifest, write_manifest, MANIFEST_MAGIC};
pub use resize::{resize_bilinear_tensor, resize_nearest_tensor, resize_sample};
pub use sample::{AugmentKind, Provenance, Sample, SampleSource};
pub use synth::{synth_dataset, synth_sample, synth_samples, Ellipse, SynthSample};

/// Side length images are resized to.
pub const IMAGE_SIZE: usize = 256;
/// Hold-out train/val/test ratios.
pub const HOLDOUT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];
pub const DEFAULT_FOLDS: usize = 5;
