//! Reverse-mode automatic differentiation over dense tensors, restricted to
//! the layers a convolutional encoder-decoder needs.

mod graph;
pub mod gradcheck;
pub mod init;
pub mod kernels;
mod optim;
mod params;

pub use graph::{softmax_channels, Graph, Var};
pub use kernels::{ConvGeom, Padding};
pub use optim::AdamState;
pub use params::{BoundParams, Param, ParamStore};

/// Mixes a base seed with a stream index (splitmix64 finalizer), used to
/// give every dropout site and batch its own reproducible stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
