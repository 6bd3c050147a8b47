//! The EUIS-Net segmentation network.
//!
//! ```text
//! x ─ CB ─ B_E^1 ─ pool/drop/CB ─ B_E^2 ─ … ─ B_E^4
//!                                                │ pool/drop
//!                                              CSAM ─ up ─┐
//! RAAM(B_E^4) ────────────────────────────────────────────┴─ B_D^1
//! B_D^k = [ up(CB(drop(B_D^{k-1}))) , RAAM(B_E^{5-k}) , up(RAAM(B_E^{6-k})) ]
//! mask  = sigmoid(conv1×1(B_D^4))
//! ```

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod net;

pub use attention::{ChannelAttention, Csam, Raam, SpatialAttention};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MomentRecord, TrainingState,
};
pub use config::ModelConfig;
pub use layers::{BatchNorm2d, BnUpdate, Conv2d, ConvBlock, ConvTranspose2d, Ctx, Init};
pub use net::{EncoderFeatures, EuisNet, ForwardVars, MIN_INPUT_SIZE};
