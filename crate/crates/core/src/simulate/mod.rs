//! Ground-truth simulators for the seven system families and dataset generation.

mod config;
mod environment;
mod init;
pub mod interactions;
mod latents;
mod system;
mod trajectory;

pub use config::{
    BandSpec, FieldImage, FieldLayout, FieldSpec, InitSpec, LatentSpec, NetworkSpec, Order, Rect,
    SystemConfig, SystemKind,
};
pub use environment::{eval_image, Environment, HiddenField, Network};
pub use init::initial_frame;
pub use interactions::{
    attraction_repulsion_scalar, interaction_attraction_repulsion, interaction_boids,
    interaction_coulomb, interaction_gravity,
};
pub use latents::{assign_latents, block_type, patch_type, LatentParams};
pub use system::{integrate, rps_rate, Dynamics, GroundTruth};
pub use trajectory::{setup, simulate, simulate_from, simulate_series, FieldTruth, Trajectory};
pub(crate) use trajectory::rng_for;

#[cfg(test)]
mod tests;
