//! The `.hdyn` dataset format.
//!
//! Line 1 is a JSON header (config, node/frame counts, field arity, endianness,
//! version). Then, per series, a `frames` block of little-endian `f64` laid out
//! frame-major, node-minor, with channels `pos.x, pos.y, vel.x, vel.y, field...`.
//! Ground truth follows in labeled blocks: `latents`, `type_id`, and when present
//! `connectivity`, `field_positions`, `field_values`.

use std::path::Path;

use hetdyn_core::dyncore::{Frame, Vec2};
use hetdyn_core::simulate::{FieldTruth, LatentParams, SystemConfig, Trajectory};
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockReader, BlockWriter};
use crate::error::{HdynError, Result};

pub const DATASET_FORMAT: &str = "hdyn";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: SystemConfig,
    n_nodes: usize,
    n_frames: usize,
    n_series: usize,
    field_arity: usize,
    channels: Vec<String>,
    latent_names: Vec<String>,
    n_types: usize,
    connectivity: bool,
    field_nodes: Option<usize>,
    field_frames: Option<usize>,
}

fn channels(arity: usize) -> Vec<String> {
    let mut c: Vec<String> = ["pos.x", "pos.y", "vel.x", "vel.y"].iter().map(|s| s.to_string()).collect();
    c.extend((0..arity).map(|k| format!("field.{k}")));
    c
}

fn pack_frames(frames: &[Frame], arity: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames.iter().map(|f| f.len() * (4 + arity)).sum());
    for f in frames {
        for i in 0..f.len() {
            out.extend_from_slice(&[f.pos[i].x, f.pos[i].y, f.vel[i].x, f.vel[i].y]);
            out.extend_from_slice(f.field_of(i));
        }
    }
    out
}

fn unpack_frames(values: &[f64], n: usize, arity: usize) -> Vec<Frame> {
    let width = 4 + arity;
    let per_frame = n * width;
    if per_frame == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(per_frame)
        .map(|chunk| {
            let mut frame = Frame::zeros(n, arity);
            for (i, node) in chunk.chunks_exact(width).enumerate() {
                frame.pos[i] = Vec2::new(node[0], node[1]);
                frame.vel[i] = Vec2::new(node[2], node[3]);
                frame.field[i * arity..(i + 1) * arity].copy_from_slice(&node[4..]);
            }
            frame
        })
        .collect()
}

/// Writes one trajectory.
pub fn write_dataset(traj: &Trajectory, path: &Path) -> Result<()> {
    write_series(std::slice::from_ref(traj), path)
}

/// Writes several series of one system; they must share config and ground truth
/// (as produced by `simulate_series`) and have equal lengths.
pub fn write_series(series: &[Trajectory], path: &Path) -> Result<()> {
    let first = series
        .first()
        .ok_or_else(|| HdynError::Usage("no trajectories to write".into()))?;
    if series
        .iter()
        .any(|t| t.config != first.config || t.latents != first.latents || t.len() != first.len())
    {
        return Err(HdynError::Usage("series in one dataset must share config, latents and length".into()));
    }
    let n = first.n();
    let arity = first.frames.first().map_or(first.kind().field_arity(), |f| f.arity);
    let header = Header {
        config: first.config.clone(),
        n_nodes: n,
        n_frames: first.len(),
        n_series: series.len(),
        field_arity: arity,
        channels: channels(arity),
        latent_names: first.latents.names.clone(),
        n_types: first.latents.n_types,
        connectivity: first.connectivity.is_some(),
        field_nodes: first.field.as_ref().map(|f| f.positions.len()),
        field_frames: first.field.as_ref().map(|f| f.values.len()),
    };
    let mut w = BlockWriter::new(DATASET_FORMAT, DATASET_VERSION, &header);
    for t in series {
        w.block("frames", &pack_frames(&t.frames, arity));
    }
    w.block("latents", &first.latents.values);
    let types: Vec<f64> = first.latents.type_id.iter().map(|&t| t as f64).collect();
    w.block("type_id", &types);
    if let Some(a) = &first.connectivity {
        w.block("connectivity", a);
    }
    if let Some(f) = &first.field {
        let pos: Vec<f64> = f.positions.iter().flat_map(|p| [p.x, p.y]).collect();
        w.block("field_positions", &pos);
        w.block("field_values", &f.values.concat());
    }
    w.write(path)
}

/// Reads a dataset holding a single series.
pub fn read_dataset(path: &Path) -> Result<Trajectory> {
    let mut series = read_series(path)?;
    if series.len() != 1 {
        return Err(HdynError::parse(
            path,
            format!("holds {} series; read it with `read_series`", series.len()),
        ));
    }
    Ok(series.remove(0))
}

pub fn read_series(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = BlockReader::open(path)?;
    let h: Header = r.header(DATASET_FORMAT, DATASET_VERSION)?;
    if h.channels != channels(h.field_arity) {
        return Err(HdynError::parse(path, "unexpected channel layout"));
    }
    let n = h.n_nodes;
    let frame_values = h.n_frames * n * (4 + h.field_arity);
    let mut frames = Vec::with_capacity(h.n_series);
    for _ in 0..h.n_series {
        frames.push(unpack_frames(&r.block("frames", Some(frame_values))?, n, h.field_arity));
    }
    let values = r.block("latents", Some(n * h.latent_names.len()))?;
    let type_id = r.block("type_id", Some(n))?;
    let mut type_ids = Vec::with_capacity(n);
    for t in type_id {
        if !(t >= 0.0 && t.fract() == 0.0) {
            return Err(HdynError::parse(path, format!("type id {t} is not a label")));
        }
        type_ids.push(t as usize);
    }
    let latents = LatentParams {
        names: h.latent_names.clone(),
        values,
        type_id: type_ids,
        n_types: h.n_types,
    };
    let connectivity = if h.connectivity {
        Some(r.block("connectivity", Some(n * n))?)
    } else {
        None
    };
    let field = match (h.field_nodes, h.field_frames) {
        (Some(m), Some(k)) => {
            let pos = r.block("field_positions", Some(2 * m))?;
            let vals = r.block("field_values", Some(m * k))?;
            Some(FieldTruth {
                positions: pos.chunks_exact(2).map(|p| Vec2::new(p[0], p[1])).collect(),
                values: if m == 0 { vec![Vec::new(); k] } else { vals.chunks_exact(m).map(<[f64]>::to_vec).collect() },
            })
        }
        _ => None,
    };
    r.finish()?;
    Ok(frames
        .into_iter()
        .map(|frames| Trajectory {
            config: h.config.clone(),
            frames,
            latents: latents.clone(),
            connectivity: connectivity.clone(),
            field: field.clone(),
        })
        .collect())
}
