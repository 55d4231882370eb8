//! Disjoint-union mini-batches: several frames (with rotations, ghosts and hidden-field
//! edges) packed into one graph.

use alloc::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::model::{field_coords, push_geo, GnnModel};
use super::spec::ModelSpec;
use crate::dyncore::{
    build_radius_neighborhood, radius_edges_between, Derivative, Edge, Frame, GraphSnapshot, NeighborRule,
    Neighborhood, NodeFlags, RadiusBand, Vec2,
};
use crate::neuralnet::Tensor;
use crate::prelude::*;
use crate::simulate::{Environment, SystemKind, Trajectory};
use crate::{Error, Result};

/// One training example: frame `t` of trajectory `traj`, rotated by `angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub traj: usize,
    pub t: usize,
    pub angle: f64,
}

/// Per-batch corruption and augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchOptions {
    pub noise_sigma: f64,
    pub ghosts: usize,
    pub multi_step: usize,
}

/// Messages from stationary hidden-field nodes.
#[derive(Debug, Clone)]
pub struct FieldEdges {
    pub recv: Arc<[usize]>,
    /// Row of `coords` that sent each message.
    pub src: Arc<[usize]>,
    pub geo: Tensor,
    pub coords: Tensor,
}

/// Several frames packed into one graph. Node indices are union indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub kind: SystemKind,
    pub samples: Vec<Sample>,
    pub n_nodes: usize,
    /// Embedding row of every union node.
    pub emb_rows: Arc<[usize]>,
    /// Whether each union node contributes to the loss.
    pub loss_mask: Vec<bool>,
    /// Edges: particle neighborhoods, mesh stencils or network links.
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
    /// Scaled geometric edge features (particle kinds).
    pub geo: Tensor,
    pub field_edges: Option<FieldEdges>,
    /// Entry of the learnable connectivity each edge reads (signaling).
    pub pair: Arc<[usize]>,
    /// Scaled node state (field kinds).
    pub state: Tensor,
    /// 1 for nodes whose prediction is used, 0 for mesh boundary nodes.
    pub interior: Tensor,
    /// Scaled uncorrupted targets, one tensor per predicted step.
    pub targets: Vec<Tensor>,
    /// Multiplicative noise `eps` applied as `target * (1 + eps)`.
    pub noise: Vec<Tensor>,
    /// Converts a scaled prediction into a scaled state increment.
    pub step_gain: f64,
}

impl Batch {
    /// Corrupted target for step `k`.
    pub fn noisy_target(&self, k: usize) -> Tensor {
        let mut t = self.targets[k].clone();
        for (v, e) in t.data.iter_mut().zip(&self.noise[k].data) {
            *v *= 1.0 + e;
        }
        t
    }

    pub fn mask_column(&self) -> Tensor {
        Tensor::column(self.loss_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
    }
}

/// The model's connectivity on the simulator's box.
pub fn model_band(model: &GnnModel, env: &Environment) -> Result<RadiusBand> {
    let b = model
        .spec
        .band
        .ok_or_else(|| Error::config("band", "particle model without a band"))?;
    Ok(RadiusBand {
        periodic: env.band.and_then(|e| e.periodic),
        ..b
    })
}

/// Receivers with a sender the simulator sees but the model's raised cutoff
/// hides; their targets hold forces the model cannot produce.
pub fn hidden_close_pairs(spec: &ModelSpec, env: &Environment, pos: &[Vec2]) -> Result<Vec<bool>> {
    let mut out = vec![false; pos.len()];
    let (Some(sim), Some(m)) = (env.band, spec.band) else {
        return Ok(out);
    };
    if m.d_min <= sim.d_min {
        return Ok(out);
    }
    let gap = RadiusBand::new(sim.d_min, m.d_min, sim.periodic);
    for e in build_radius_neighborhood(pos, gap)?.edges {
        out[e.receiver] = true;
    }
    Ok(out)
}

/// Graph of frame `t` under the model's connectivity rule.
pub fn snapshot(model: &GnnModel, env: &Environment, traj: &Trajectory, t: usize) -> Result<GraphSnapshot> {
    let frame = traj.frames[t].clone();
    let n = frame.len();
    let mut flags = vec![NodeFlags::OBSERVED; n];
    let edges = match model.kind() {
        k if k.is_particle() => build_radius_neighborhood(&frame.pos, model_band(model, env)?)?,
        SystemKind::Signaling => env.require_network()?.edges.clone(),
        _ => {
            let mesh = env.require_mesh()?;
            for (f, &b) in flags.iter_mut().zip(&mesh.boundary) {
                f.boundary = b;
            }
            mesh.neighborhood.clone()
        }
    };
    Ok(GraphSnapshot { t, frame, edges, flags })
}

/// Appends `count` ghost nodes at uniform random positions with zero velocity.
/// Ghosts send messages to the observed nodes within the band but receive none.
pub fn add_ghosts<R: Rng>(
    snap: &GraphSnapshot,
    count: usize,
    band: RadiusBand,
    box_size: f64,
    rng: &mut R,
) -> Result<GraphSnapshot> {
    if count == 0 {
        return Ok(snap.clone());
    }
    let n = snap.frame.len();
    let (lo, hi) = match band.periodic {
        Some(l) => (Vec2::ZERO, Vec2::new(l, l)),
        None => bounding_box(&snap.frame.pos, box_size),
    };
    let ghosts: Vec<Vec2> = (0..count)
        .map(|_| {
            Vec2::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
            )
        })
        .collect();
    let mut edges = snap.edges.edges.clone();
    for e in radius_edges_between(&snap.frame.pos, &ghosts, band)? {
        edges.push(Edge::new(e.receiver, n + e.sender));
    }
    let mut frame = snap.frame.clone();
    frame.pos.extend_from_slice(&ghosts);
    frame.vel.extend(core::iter::repeat_n(Vec2::ZERO, count));
    frame.field.extend(core::iter::repeat_n(0.0, count * frame.arity));
    let mut flags = snap.flags.clone();
    flags.extend(core::iter::repeat_n(
        NodeFlags {
            observable: false,
            ghost: true,
            boundary: false,
        },
        count,
    ));
    Ok(GraphSnapshot {
        t: snap.t,
        frame,
        edges: Neighborhood {
            rule: NeighborRule::Radius(band),
            edges,
        },
        flags,
    })
}

fn bounding_box(pos: &[Vec2], fallback: f64) -> (Vec2, Vec2) {
    if pos.is_empty() {
        return (Vec2::ZERO, Vec2::new(fallback, fallback));
    }
    let mut lo = pos[0];
    let mut hi = pos[0];
    for p in pos {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

fn target_values(traj: &Trajectory, t: usize) -> Vec<f64> {
    match traj.target(t) {
        Derivative::Velocity(v) | Derivative::Acceleration(v) => v.iter().flat_map(|p| [p.x, p.y]).collect(),
        Derivative::FieldRate(v) | Derivative::FieldAcceleration(v) => v,
    }
}

fn state_values(kind: SystemKind, frame: &Frame) -> Vec<f64> {
    let c = kind.derivative_width();
    (0..frame.len()).flat_map(|i| frame.field_of(i)[..c].to_vec()).collect()
}

/// Packs `samples` into one batch. `envs[k]` is the environment of `data[k]`.
pub fn build_batch<R: Rng>(
    model: &GnnModel,
    data: &[Trajectory],
    envs: &[Environment],
    samples: &[Sample],
    opts: BatchOptions,
    rng: &mut R,
) -> Result<Batch> {
    let kind = model.kind();
    let s = model.spec.scales;
    let width = kind.derivative_width();
    let steps = opts.multi_step.max(1);
    if opts.ghosts > model.spec.n_ghosts {
        return Err(Error::config(
            "ghost_count",
            format!("model has {} ghost embeddings, {} requested", model.spec.n_ghosts, opts.ghosts),
        ));
    }
    let mut b = Builder::default();
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); steps];
    for sample in samples {
        let traj = data
            .get(sample.traj)
            .ok_or_else(|| Error::InvalidInput(format!("no trajectory {}", sample.traj)))?;
        let env = &envs[sample.traj];
        if traj.kind() != kind {
            return Err(Error::config("kind", "training data and model disagree on the system kind"));
        }
        if sample.t + steps >= traj.len() {
            return Err(Error::InvalidInput(format!(
                "frame {} has no {steps}-step target in a trajectory of {}",
                sample.t,
                traj.len()
            )));
        }
        let base = b.n_nodes;
        let snap = snapshot(model, env, traj, sample.t)?;
        let n = traj.n();
        if kind.is_particle() {
            let band = model_band(model, env)?;
            let snap = add_ghosts(&snap, opts.ghosts, band, env.box_size, rng)?;
            let pos = &snap.frame.pos;
            let vel = &snap.frame.vel;
            for e in &snap.edges.edges {
                let dx = band.displacement(pos[e.receiver], pos[e.sender]).rotated(sample.angle);
                b.recv.push(base + e.receiver);
                b.send.push(base + e.sender);
                push_geo(
                    kind,
                    &s,
                    dx,
                    vel[e.receiver].rotated(sample.angle),
                    vel[e.sender].rotated(sample.angle),
                    &mut b.geo,
                );
            }
            if let Some(field) = &env.field {
                let coord_base = if model.spec.field_time {
                    let rows = field_coords(&model.spec, &field.positions, sample.t);
                    let base = b.coords.len() / rows.cols;
                    b.coords.extend(rows.data);
                    b.coord_cols = rows.cols;
                    base
                } else {
                    if b.coords.is_empty() {
                        let rows = field_coords(&model.spec, &field.positions, 0);
                        b.coord_cols = rows.cols;
                        b.coords = rows.data;
                    }
                    0
                };
                for e in radius_edges_between(&pos[..n], &field.positions, band)? {
                    let dx = band
                        .displacement(pos[e.receiver], field.positions[e.sender])
                        .rotated(sample.angle);
                    b.field_recv.push(base + e.receiver);
                    b.field_src.push(coord_base + e.sender);
                    push_geo(kind, &s, dx, vel[e.receiver].rotated(sample.angle), Vec2::ZERO, &mut b.field_geo);
                }
            }
            let hidden = hidden_close_pairs(&model.spec, env, &pos[..n])?;
            for (i, f) in snap.flags.iter().enumerate() {
                // Ghost rows follow the observed rows in the embedding table.
                b.emb_rows.push(i);
                b.mask.push(f.in_loss() && !hidden.get(i).copied().unwrap_or(false));
                b.interior.push(1.0);
            }
            let tv = target_values(traj, sample.t);
            for i in 0..snap.frame.len() {
                let v = if i < n {
                    Vec2::new(tv[2 * i], tv[2 * i + 1]).rotated(sample.angle)
                } else {
                    Vec2::ZERO
                };
                targets[0].extend_from_slice(&[v.x / s.out, v.y / s.out]);
            }
            b.n_nodes += snap.frame.len();
        } else {
            for e in &snap.edges.edges {
                b.recv.push(base + e.receiver);
                b.send.push(base + e.sender);
            }
            if kind == SystemKind::Signaling {
                let a = model
                    .a_learn
                    .as_ref()
                    .ok_or_else(|| Error::config("a_learn", "signaling model without connectivity"))?;
                if a.edges != snap.edges.edges {
                    return Err(Error::config("network", "training network differs from the model's edge support"));
                }
                b.pair.extend_from_slice(&a.pair);
            }
            b.state
                .extend(state_values(kind, &snap.frame).iter().map(|u| u / s.state));
            for (i, f) in snap.flags.iter().enumerate() {
                b.emb_rows.push(i);
                b.mask.push(f.in_loss());
                b.interior.push(if f.boundary { 0.0 } else { 1.0 });
            }
            for (k, tk) in targets.iter_mut().enumerate() {
                let tv = target_values(traj, sample.t + k);
                for (i, f) in snap.flags.iter().enumerate() {
                    for c in 0..width {
                        tk.push(if f.boundary { 0.0 } else { tv[i * width + c] / s.out });
                    }
                }
            }
            b.n_nodes += n;
        }
    }
    let n_nodes = b.n_nodes;
    let mut noise = Vec::with_capacity(steps);
    let normal = (opts.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, opts.noise_sigma).map_err(|e| Error::config("noise_sigma", e.to_string())))
        .transpose()?;
    for _ in 0..steps {
        let data = match &normal {
            Some(d) => (0..n_nodes * width).map(|_| d.sample(rng)).collect(),
            None => vec![0.0; n_nodes * width],
        };
        noise.push(Tensor {
            rows: n_nodes,
            cols: width,
            data,
        });
    }
    let dt = envs.first().map_or(1.0, |e| e.dt);
    let geo_cols = super::model::geo_width(kind);
    let field_edges = (!b.field_recv.is_empty() || !b.coords.is_empty()).then(|| FieldEdges {
        recv: b.field_recv.into(),
        src: b.field_src.into(),
        geo: Tensor {
            rows: b.field_geo.len() / geo_cols,
            cols: geo_cols,
            data: b.field_geo,
        },
        coords: Tensor {
            rows: b.coords.len() / b.coord_cols.max(1),
            cols: b.coord_cols,
            data: b.coords,
        },
    });
    Ok(Batch {
        kind,
        samples: samples.to_vec(),
        n_nodes,
        emb_rows: b.emb_rows.into(),
        loss_mask: b.mask,
        recv: b.recv.into(),
        send: b.send.into(),
        geo: Tensor {
            rows: b.geo.len() / geo_cols,
            cols: if kind.is_particle() { geo_cols } else { 0 },
            data: b.geo,
        },
        field_edges,
        pair: b.pair.into(),
        state: Tensor {
            rows: n_nodes,
            cols: if kind.is_particle() { 0 } else { width },
            data: b.state,
        },
        interior: Tensor::column(b.interior),
        targets: targets
            .into_iter()
            .map(|data| Tensor {
                rows: n_nodes,
                cols: width,
                data,
            })
            .collect(),
        noise,
        step_gain: dt * s.out / s.state,
    })
}

#[derive(Default)]
struct Builder {
    n_nodes: usize,
    emb_rows: Vec<usize>,
    mask: Vec<bool>,
    interior: Vec<f64>,
    recv: Vec<usize>,
    send: Vec<usize>,
    geo: Vec<f64>,
    pair: Vec<usize>,
    state: Vec<f64>,
    field_recv: Vec<usize>,
    field_src: Vec<usize>,
    field_geo: Vec<f64>,
    coords: Vec<f64>,
    coord_cols: usize,
}
