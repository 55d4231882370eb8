use super::cluster::ClusterResult;
use crate::dyncore::Frame;
use crate::gnn::{InteractionModel, ModelDynamics};
use crate::math;
use crate::prelude::*;
use crate::simulate::{integrate, Environment};
use crate::{Error, Result};

/// Per-dimension median embedding of each cluster (`NaN` for empty clusters).
pub fn cluster_medians(emb: &[[f64; 2]], clusters: &ClusterResult) -> Vec<[f64; 2]> {
    (0..clusters.n_clusters)
        .map(|c| {
            let mut out = [f64::NAN; 2];
            for (dim, o) in out.iter_mut().enumerate() {
                let mut v: Vec<f64> = emb
                    .iter()
                    .zip(&clusters.labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(a, _)| a[dim])
                    .collect();
                if !v.is_empty() {
                    *o = math::median(&mut v);
                }
            }
            out
        })
        .collect()
}

/// Virtual (de)composition: runs `model` on a new population whose node `i` carries
/// the median embedding of cluster `types[i]`, from `initial`.
///
/// Returns `steps` frames starting with `initial`, the same count a simulator run
/// with `steps` configured produces. No nodes or no steps give no frames.
pub fn decompose(
    model: &dyn InteractionModel,
    env: &Environment,
    clusters: &ClusterResult,
    types: &[usize],
    initial: Frame,
    steps: usize,
) -> Result<Vec<Frame>> {
    if types.len() != initial.len() {
        return Err(Error::Shape(format!(
            "{} type labels for an initial frame of {} nodes",
            types.len(),
            initial.len()
        )));
    }
    if initial.is_empty() || steps == 0 {
        return Ok(Vec::new());
    }
    let medians = cluster_medians(&model.embeddings(), clusters);
    let emb = types
        .iter()
        .map(|&t| {
            medians
                .get(t)
                .copied()
                .filter(|m| m[0].is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("no cluster {t} to take an embedding from")))
        })
        .collect::<Result<Vec<_>>>()?;
    let dynamics = ModelDynamics::with_embeddings(model, env.clone(), emb);
    integrate(&dynamics, initial, 0, steps - 1)
}
