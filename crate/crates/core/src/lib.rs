//! Bimodal (event + RGB) encoder-decoder segmentation.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: tensors, a define-by-run graph with reverse-mode
//!   gradients, Adam and finite-difference checking.
//! - [`events`]: event records, window accumulation into per-polarity
//!   frames and the binary/CSV event formats.
//! - [`model`]: the two-encoder network with atrous pyramid pooling and its
//!   ablation variants.
//! - [`synth`]: a synthetic scene renderer, DVS simulator, degradations and
//!   patch tiling.
//! - [`metrics`]: pixel accuracy and mean intersection over union.
//! - [`harness`]: training, checkpoints, evaluation reports and the
//!   architecture comparison suite.

pub mod autodiff;
mod error;
pub mod events;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod synth;
mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Element, Tensor};
