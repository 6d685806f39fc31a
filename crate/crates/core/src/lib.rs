//! Two-stream image manipulation detection at trainable-on-a-laptop scale.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation, SGD, a
//!   finite-difference gradient checker, and a binary checkpoint format.
//! - [`srm`]: the fixed high-pass residual filter bank that turns an RGB
//!   image into a local-noise feature map.
//! - [`detector`]: the two-stream detection network — small convolutional
//!   backbones over the RGB image and its noise map, a region proposal head,
//!   RoI pooling on both streams, bilinear (or count-sketch) fusion for
//!   manipulation classification, and box regression.
//! - [`synth`]: synthetic tamper dataset generation (splice, copy-move,
//!   removal) over any corpus of images with object masks, plus
//!   augmentations and robustness attacks.
//! - [`eval`]: pixel-level F1 (best threshold) and AUC, detection AP, and
//!   manifest-level robustness reports.
//! - [`train`]: the end-to-end training loop with per-step loss logging.

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod srm;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
