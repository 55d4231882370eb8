//! Forward simulation of heterogeneous interacting-particle systems, message-passing
//! networks with per-node latent embeddings that learn those dynamics from
//! trajectories, and the analysis tools that read the hidden heterogeneity back out
//! of a trained model.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All floating-point special functions go through `libm`, so results are
//! bit-identical across both builds.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analyze;
pub mod dyncore;
mod error;
pub mod gnn;
pub(crate) mod math;
pub mod neuralnet;
pub mod simulate;

pub use error::{Error, Result};

pub(crate) mod prelude {
    pub use alloc::format;
    pub use alloc::string::{String, ToString};
    pub use alloc::vec;
    pub use alloc::vec::Vec;
}
