use super::{Edge, NeighborRule, Neighborhood, Vec2};
use crate::prelude::*;
use crate::{Error, Result};

/// Regular `side x side` lattice with a 4-neighbor stencil.
///
/// Node `r * side + c` sits at `((c + 0.5) / side, (r + 0.5) / side)`. Every
/// lattice adjacency is present in both directions; nodes on the outer ring are
/// flagged as boundary and have no valid Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMesh {
    pub side: usize,
    pub neighborhood: Neighborhood,
    pub boundary: Vec<bool>,
    pub positions: Vec<Vec2>,
}

impl GridMesh {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.boundary[i])
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.side, i % self.side)
    }
}

pub fn build_grid_mesh(side: usize) -> Result<GridMesh> {
    if side < 3 {
        return Err(Error::InvalidInput(format!("grid side must be >= 3, got {side}")));
    }
    let n = side * side;
    let mut edges = Vec::with_capacity(4 * n);
    let mut boundary = vec![false; n];
    let mut positions = Vec::with_capacity(n);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            boundary[i] = r == 0 || c == 0 || r == side - 1 || c == side - 1;
            positions.push(Vec2::new(
                (c as f64 + 0.5) / side as f64,
                (r as f64 + 0.5) / side as f64,
            ));
            // Sender order: up, left, right, down keeps edges sorted by sender.
            if r > 0 {
                edges.push(Edge::new(i, i - side));
            }
            if c > 0 {
                edges.push(Edge::new(i, i - 1));
            }
            if c + 1 < side {
                edges.push(Edge::new(i, i + 1));
            }
            if r + 1 < side {
                edges.push(Edge::new(i, i + side));
            }
        }
    }
    Ok(GridMesh {
        side,
        neighborhood: Neighborhood {
            rule: NeighborRule::GridMesh { side },
            edges,
        },
        boundary,
        positions,
    })
}

/// Per-node, per-channel graph Laplacian `sum_j (u_j - u_i)`.
///
/// Boundary entries are zero and flagged invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshLaplacian {
    pub values: Vec<f64>,
    pub channels: usize,
    pub valid: Vec<bool>,
}

impl MeshLaplacian {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }
}

/// Unweighted graph Laplacian of a `channels`-wide field laid out node-major.
pub fn laplacian(field: &[f64], channels: usize, mesh: &GridMesh) -> MeshLaplacian {
    let n = mesh.len();
    debug_assert_eq!(field.len(), n * channels);
    let mut values = vec![0.0; n * channels];
    for e in &mesh.neighborhood.edges {
        let i = e.receiver;
        if mesh.boundary[i] {
            continue;
        }
        let j = e.sender;
        for k in 0..channels {
            values[i * channels + k] += field[j * channels + k] - field[i * channels + k];
        }
    }
    MeshLaplacian {
        values,
        channels,
        valid: mesh.boundary.iter().map(|b| !b).collect(),
    }
}
