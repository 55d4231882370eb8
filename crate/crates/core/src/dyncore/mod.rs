//! Shared domain types, neighborhood construction, the grid mesh and its Laplacian,
//! and the Euler integrator used by both the simulators and learned-model rollouts.

mod euler;
mod mesh;
mod neighbor;
mod state;
mod vec2;

pub use euler::{euler_step, euler_step_in_place, Derivative};
pub use mesh::{build_grid_mesh, laplacian, GridMesh, MeshLaplacian};
pub use neighbor::{
    build_radius_neighborhood, radius_edges_between, Edge, NeighborRule, Neighborhood, RadiusBand,
};
pub use state::{Frame, GraphSnapshot, NodeFlags, NodeState};
pub use vec2::Vec2;
