//! EUIS-Net: an encoder–decoder network for ultrasound image segmentation,
//! built on a small dense-tensor library with reverse-mode differentiation.
//!
//! - [`tensor`], [`kernels`], [`tape`], [`gradcheck`]: NCHW tensors, the
//!   differentiable kernel set, and finite-difference verification.
//! - [`model`]: the network with its region-aware skip attention and
//!   channel/spatial bottleneck attention, plus the checkpoint format.
//! - [`metrics`]: confusion counts and the J/D/Acc/Sn/Sp metrics.
//! - [`data`]: dataset loading, resizing, augmentation, splits, batching.
//! - [`train`]: losses, Adam, plateau schedule, early stopping, training
//!   and evaluation loops.
//! - [`config`]: the flat `key=value` run configuration.
//! - [`commands`]: the operations behind the `euisnet` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{EuisNet, ModelConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Mode, Tape, Var};
pub use tensor::{Scalar, Shape, Tensor};
