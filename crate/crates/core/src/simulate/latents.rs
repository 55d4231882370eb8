use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{LatentSpec, Rect, SystemConfig};
use crate::math;
use crate::prelude::*;
use crate::Result;

/// Ground-truth per-node parameters, stored row-major (`n x names.len()`).
///
/// Only used to generate data and to score analyses; models never see them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub type_id: Vec<usize>,
    pub n_types: usize,
}

impl LatentParams {
    pub fn new(names: &[&str], values: Vec<f64>, type_id: Vec<usize>) -> Self {
        debug_assert_eq!(values.len(), names.len() * type_id.len());
        let n_types = type_id.iter().max().map_or(0, |m| m + 1);
        LatentParams {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
            type_id,
            n_types,
        }
    }

    pub fn len(&self) -> usize {
        self.type_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.type_id.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.width();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((0..self.len()).map(|i| self.row(i)[k]).collect())
    }

    /// Parameters of the first node of each type.
    pub fn type_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_types)
            .map(|t| {
                self.type_id
                    .iter()
                    .position(|&id| id == t)
                    .map_or_else(Vec::new, |i| self.row(i).to_vec())
            })
            .collect()
    }

    pub fn select(&self, nodes: &[usize]) -> LatentParams {
        let values = nodes.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        LatentParams {
            names: self.names.clone(),
            values,
            type_id: nodes.iter().map(|&i| self.type_id[i]).collect(),
            n_types: self.n_types,
        }
    }
}

/// Type of node `i` when `n` nodes are split into `k` contiguous blocks.
pub fn block_type(i: usize, n: usize, k: usize) -> usize {
    i * k / n
}

/// Type of grid cell `(r, c)` when `k` types tile the grid as rectangular patches.
pub fn patch_type(r: usize, c: usize, side: usize, k: usize) -> usize {
    let cols = math::sqrt(k as f64) as usize;
    let cols = if cols * cols < k { cols + 1 } else { cols }.max(1);
    let rows = k.div_ceil(cols);
    let t = (r * rows / side) * cols + c * cols / side;
    t.min(k - 1)
}

fn apply_obstacles(
    obstacles: &[Rect],
    side: usize,
    p: usize,
    values: &mut [f64],
    type_id: &mut [usize],
    obstacle_type: usize,
) {
    for i in 0..type_id.len() {
        let (r, c) = (i / side, i % side);
        if obstacles.iter().any(|o| o.contains(r, c)) {
            values[i * p..(i + 1) * p].fill(0.0);
            type_id[i] = obstacle_type;
        }
    }
}

/// Draws the latent parameters described by `cfg.latents`.
pub fn assign_latents<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Result<LatentParams> {
    cfg.validate()?;
    let names = cfg.kind.param_names();
    let p = names.len();
    let n = cfg.n;
    let mut values = Vec::with_capacity(n * p);
    let mut type_id = Vec::with_capacity(n);
    match &cfg.latents {
        LatentSpec::Types { params } => {
            for i in 0..n {
                let t = block_type(i, n, params.len());
                values.extend_from_slice(&params[t]);
                type_id.push(t);
            }
        }
        LatentSpec::Uniform { ranges } => {
            for _ in 0..n {
                for r in ranges {
                    values.push(r[0] + (r[1] - r[0]) * rng.random::<f64>());
                }
                type_id.push(0);
            }
        }
        LatentSpec::Patches { params, obstacles } => {
            let side = cfg.side();
            for i in 0..n {
                let t = patch_type(i / side, i % side, side, params.len());
                values.extend_from_slice(&params[t]);
                type_id.push(t);
            }
            apply_obstacles(obstacles, side, p, &mut values, &mut type_id, params.len());
        }
        LatentSpec::Smooth { range, obstacles } => {
            let side = cfg.side();
            for i in 0..n {
                let x = ((i % side) as f64 + 0.5) / side as f64;
                let y = ((i / side) as f64 + 0.5) / side as f64;
                let s = 0.5
                    + 0.5 * math::sin(2.0 * core::f64::consts::PI * x) * math::cos(core::f64::consts::PI * y);
                values.push(range[0] + (range[1] - range[0]) * s);
                type_id.push(0);
            }
            apply_obstacles(obstacles, side, p, &mut values, &mut type_id, 1);
        }
    }
    Ok(LatentParams::new(names, values, type_id))
}
