use serde::{Deserialize, Serialize};

use super::cluster::{cluster_points, project_profiles, ClusterResult, CLUSTER_THRESHOLD};
use crate::gnn::{EdgeQuery, InteractionModel};
use crate::math;
use crate::prelude::*;
use crate::simulate::{Environment, SystemKind};
use crate::{Error, Result};

/// One node's response along a 1-D sample grid.
///
/// Particle kinds: signed radial component of `f` for a sender at distance `d`
/// with zeroed velocities. Field kinds: the update function along a state or
/// Laplacian grid (see [`default_grid`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionProfile {
    pub node: usize,
    pub grid: Vec<f64>,
    pub response: Vec<f64>,
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Fixed state of the reaction-diffusion profiles: the interior fixed point.
pub fn rps_probe_state(beta: f64) -> [f64; 3] {
    let u = 1.0 / (3.0 + beta);
    [u, u, u]
}

/// 200-point default grid: the distance band for particles (open ends nudged
/// inward), the Laplacian range for meshes, the state range for signaling.
pub fn default_grid(model: &dyn InteractionModel, lap_range: f64, state_range: f64) -> Result<Vec<f64>> {
    const N: usize = 200;
    Ok(match model.kind() {
        k if k.is_particle() => {
            let b = model
                .band()
                .ok_or_else(|| Error::config("band", "particle model without a band"))?;
            let eps = 1e-3 * (b.d_max - b.d_min);
            linspace(b.d_min + eps, b.d_max - eps, N)
        }
        SystemKind::Signaling => linspace(-state_range, state_range, N),
        _ => linspace(-lap_range, lap_range, N),
    })
}

/// Response of every node (or of the given embeddings) along `grid`.
///
/// For coulomb the sender shares the receiver's embedding. Mesh profiles vary the
/// first Laplacian channel at the probe state (zero for wave); signaling profiles
/// vary the node's own state.
pub fn extract_profiles_for(
    model: &dyn InteractionModel,
    emb: &[[f64; 2]],
    grid: &[f64],
    beta: f64,
) -> Result<Vec<InteractionProfile>> {
    let kind = model.kind();
    let n = emb.len();
    let g = grid.len();
    let response: Vec<f64> = if kind.is_particle() {
        let queries: Vec<EdgeQuery> = emb
            .iter()
            .flat_map(|&a| grid.iter().map(move |&d| EdgeQuery::radial(a, a, d)))
            .collect();
        model.messages(&queries)?.iter().map(|m| m.x).collect()
    } else {
        let c = kind.derivative_width();
        let mut emb_rows = Vec::with_capacity(n * g);
        let mut state = Vec::with_capacity(n * g * c);
        let mut lap = Vec::new();
        for &a in emb {
            for &x in grid {
                emb_rows.push(a);
                match kind {
                    SystemKind::Signaling => state.push(x),
                    SystemKind::Wave => {
                        state.push(0.0);
                        lap.push(x);
                    }
                    _ => {
                        state.extend_from_slice(&rps_probe_state(beta));
                        lap.extend_from_slice(&[x, 0.0, 0.0]);
                    }
                }
            }
        }
        let out = model.update(&emb_rows, &state, &lap)?;
        (0..n * g).map(|k| out[k * c]).collect()
    };
    Ok((0..n)
        .map(|i| InteractionProfile {
            node: i,
            grid: grid.to_vec(),
            response: response[i * g..(i + 1) * g].to_vec(),
        })
        .collect())
}

/// Profiles of all observed nodes of `model`.
pub fn extract_profiles(model: &dyn InteractionModel, grid: &[f64], beta: f64) -> Result<Vec<InteractionProfile>> {
    extract_profiles_for(model, &model.embeddings(), grid, beta)
}

/// Root-mean-square difference of two equally sampled profiles.
pub fn profile_rmse(a: &InteractionProfile, b: &InteractionProfile) -> f64 {
    let n = a.response.len().max(1) as f64;
    let s: f64 = a.response.iter().zip(&b.response).map(|(x, y)| (x - y) * (x - y)).sum();
    math::sqrt(s / n)
}

/// Clusters nodes by their profiles: PCA to two dimensions, normalization to unit
/// extent, single linkage at [`CLUSTER_THRESHOLD`].
pub fn cluster_profiles(profiles: &[InteractionProfile]) -> ClusterResult {
    let rows: Vec<Vec<f64>> = profiles.iter().map(|p| p.response.clone()).collect();
    cluster_points(&project_profiles(&rows), CLUSTER_THRESHOLD)
}

/// Profile-based clustering of a model's observed nodes, as used by bootstrapping.
pub fn cluster_model(model: &dyn InteractionModel, env: Option<&Environment>) -> Result<ClusterResult> {
    let beta = env.map_or(0.7, |e| e.beta);
    let (lap, state) = model.probe_ranges();
    let grid = default_grid(model, lap, state)?;
    Ok(cluster_profiles(&extract_profiles(model, &grid, beta)?))
}

/// Single-linkage clusters of the raw embeddings (normalized to unit extent).
pub fn cluster_embeddings(emb: &[[f64; 2]]) -> ClusterResult {
    cluster_points(emb, CLUSTER_THRESHOLD)
}
