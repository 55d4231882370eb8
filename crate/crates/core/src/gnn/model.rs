use alloc::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::reference::{EdgeQuery, InteractionModel};
use super::spec::{ModelSpec, Scales};
use crate::dyncore::{Edge, RadiusBand, Vec2};
use crate::neuralnet::{EmbeddingTable, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::prelude::*;
use crate::simulate::{Network, SystemKind};
use crate::{Error, Result};

/// Which endpoint's embedding a message sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Receiver,
    Sender,
}

pub(crate) fn embedding_sides(kind: SystemKind) -> &'static [Side] {
    match kind {
        SystemKind::Gravity => &[Side::Sender],
        SystemKind::Coulomb => &[Side::Receiver, Side::Sender],
        _ => &[Side::Receiver],
    }
}

/// Columns of the non-embedding part of a particle message input.
pub(crate) fn geo_width(kind: SystemKind) -> usize {
    if kind == SystemKind::Boids {
        7
    } else {
        3
    }
}

/// Scaled `[d, dx, (v_i, v_j)]` for one edge.
#[inline]
pub(crate) fn push_geo(kind: SystemKind, s: &Scales, dx: Vec2, vel_i: Vec2, vel_j: Vec2, out: &mut Vec<f64>) {
    let inv = 1.0 / s.length;
    out.extend_from_slice(&[dx.norm() * inv, dx.x * inv, dx.y * inv]);
    if kind == SystemKind::Boids {
        let iv = 1.0 / s.vel;
        out.extend_from_slice(&[vel_i.x * iv, vel_i.y * iv, vel_j.x * iv, vel_j.y * iv]);
    }
}

/// Learnable weights on the undirected edges of a known network; both directions
/// of an edge read the same entry, so the matrix is symmetric by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricWeights {
    pub id: ParamId,
    /// Directed edges, as in the network.
    pub edges: Vec<Edge>,
    /// Entry of the undirected pair each directed edge reads.
    pub pair: Vec<usize>,
    pub n_pairs: usize,
}

impl SymmetricWeights {
    fn new<R: Rng>(net: &Network, store: &mut ParamStore, rng: &mut R) -> Self {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut edges = Vec::new();
        let mut pair = Vec::new();
        let mut lookup = alloc::collections::BTreeMap::new();
        for e in &net.edges.edges {
            let key = (e.receiver.min(e.sender), e.receiver.max(e.sender));
            let k = *lookup.entry(key).or_insert_with(|| {
                pairs.push(key);
                pairs.len() - 1
            });
            edges.push(*e);
            pair.push(k);
        }
        let init = (0..pairs.len()).map(|_| 0.1 * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let id = store.add("A", Tensor::column(init));
        SymmetricWeights {
            id,
            edges,
            pair,
            n_pairs: pairs.len(),
        }
    }

    /// Current weight of every directed edge.
    pub fn weights(&self, store: &ParamStore) -> Vec<f64> {
        let a = &store.get(self.id).data;
        self.pair.iter().map(|&k| a[k]).collect()
    }

    /// Dense `n x n` matrix, row = receiver.
    pub fn dense(&self, store: &ParamStore, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for (e, w) in self.edges.iter().zip(self.weights(store)) {
            out[e.receiver * n + e.sender] = w;
        }
        out
    }
}

/// A message-passing model with per-node learnable embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub embeddings: EmbeddingTable,
    pub f: Option<Mlp>,
    pub phi: Option<Mlp>,
    pub field: Option<Mlp>,
    pub a_learn: Option<SymmetricWeights>,
}

impl GnnModel {
    /// Fresh model; `network` supplies the edge support of the learnable
    /// connectivity (signaling only).
    pub fn new<R: Rng>(spec: ModelSpec, network: Option<&Network>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let embeddings = EmbeddingTable::new(spec.embedding_rows(), "a", &mut store);
        let f = spec.f_net.map(|s| Mlp::new(s, "f", &mut store, rng)).transpose()?;
        let phi = spec.phi_net.map(|s| Mlp::new(s, "phi", &mut store, rng)).transpose()?;
        let field = spec.field_net.map(|s| Mlp::new(s, "field", &mut store, rng)).transpose()?;
        let a_learn = if spec.kind == SystemKind::Signaling {
            let net = network.ok_or_else(|| Error::config("network", "signaling models need the network's edges"))?;
            if net.n != spec.n_nodes {
                return Err(Error::Shape(format!("network has {} nodes, model {}", net.n, spec.n_nodes)));
            }
            Some(SymmetricWeights::new(net, &mut store, rng))
        } else {
            None
        };
        Ok(GnnModel {
            spec,
            store,
            embeddings,
            f,
            phi,
            field,
            a_learn,
        })
    }

    pub fn kind(&self) -> SystemKind {
        self.spec.kind
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Embedding rows of the observed nodes.
    pub fn embedding_values(&self) -> Vec<[f64; 2]> {
        let e = self.store.get(self.embeddings.id);
        (0..self.spec.n_nodes).map(|i| [e.at(i, 0), e.at(i, 1)]).collect()
    }

    pub fn set_embedding(&mut self, i: usize, a: [f64; 2]) {
        let e = self.store.get_mut(self.embeddings.id);
        e.row_mut(i).copy_from_slice(&a);
    }

    fn f_net(&self) -> Result<&Mlp> {
        self.f
            .as_ref()
            .ok_or_else(|| Error::config("f_net", format!("{} models have no interaction net", self.kind().name())))
    }

    fn phi_net(&self) -> Result<&Mlp> {
        self.phi
            .as_ref()
            .ok_or_else(|| Error::config("phi_net", format!("{} models have no update net", self.kind().name())))
    }

    /// Scaled predictions for every union node of `batch`, one per predicted step.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Vec<Var>> {
        if batch.kind != self.kind() {
            return Err(Error::config("kind", "batch and model disagree on the system kind"));
        }
        let emb = tape.param(&self.store, self.embeddings.id);
        if self.kind().is_particle() {
            return Ok(vec![self.particle_forward(tape, batch, emb)?]);
        }
        let node_emb = tape.gather(emb, Arc::clone(&batch.emb_rows));
        let mut state = tape.leaf(batch.state.clone());
        let interior = tape.leaf(batch.interior.clone());
        let mut preds = Vec::with_capacity(batch.targets.len());
        for k in 0..batch.targets.len() {
            let pred = match self.kind() {
                SystemKind::Signaling => self.signaling_step(tape, batch, node_emb, state)?,
                _ => self.mesh_step(tape, batch, node_emb, state)?,
            };
            let pred = tape.mul_col(pred, interior);
            preds.push(pred);
            if k + 1 < batch.targets.len() {
                let delta = tape.scale(pred, batch.step_gain);
                state = tape.add(state, delta);
            }
        }
        Ok(preds)
    }

    fn particle_forward(&self, tape: &mut Tape, batch: &Batch, emb: Var) -> Result<Var> {
        let kind = self.kind();
        let f = self.f_net()?;
        let mut parts = Vec::new();
        for side in embedding_sides(kind) {
            let idx: Arc<[usize]> = match side {
                Side::Receiver => batch.recv.iter().map(|&i| batch.emb_rows[i]).collect(),
                Side::Sender => batch.send.iter().map(|&j| batch.emb_rows[j]).collect(),
            };
            parts.push(tape.gather(emb, idx));
        }
        parts.push(tape.leaf(batch.geo.clone()));
        let x = tape.concat(&parts);
        let mut msgs = f.forward(tape, &self.store, x)?;
        let mut recv = Arc::clone(&batch.recv);
        if let Some(fe) = &batch.field_edges {
            let net = self
                .field
                .as_ref()
                .ok_or_else(|| Error::config("field_net", "batch has hidden-field edges but the model has no field net"))?;
            let idx: Arc<[usize]> = fe.recv.iter().map(|&i| batch.emb_rows[i]).collect();
            let ei = tape.gather(emb, idx);
            let geo = tape.leaf(fe.geo.clone());
            let x = tape.concat(&[ei, geo]);
            let m = f.forward(tape, &self.store, x)?;
            let coords = tape.leaf(fe.coords.clone());
            let b = net.forward(tape, &self.store, coords)?;
            let bj = tape.gather(b, Arc::clone(&fe.src));
            let m = tape.mul_col(m, bj);
            msgs = tape.concat_rows(&[msgs, m]);
            recv = recv.iter().chain(fe.recv.iter()).copied().collect();
        }
        Ok(match self.spec.aggregation {
            super::Aggregation::Mean => tape.scatter_mean(msgs, recv, batch.n_nodes),
            _ => tape.scatter_add(msgs, recv, batch.n_nodes),
        })
    }

    fn mesh_step(&self, tape: &mut Tape, batch: &Batch, node_emb: Var, state: Var) -> Result<Var> {
        let s = self.spec.scales;
        let uj = tape.gather(state, Arc::clone(&batch.send));
        let ui = tape.gather(state, Arc::clone(&batch.recv));
        let diff = tape.sub(uj, ui);
        let lap = tape.scatter_add(diff, Arc::clone(&batch.recv), batch.n_nodes);
        let lap = tape.scale(lap, s.state / s.lap);
        let x = if self.kind() == SystemKind::Wave {
            tape.concat(&[node_emb, lap])
        } else {
            tape.concat(&[node_emb, state, lap])
        };
        self.phi_net()?.forward(tape, &self.store, x)
    }

    fn signaling_step(&self, tape: &mut Tape, batch: &Batch, node_emb: Var, state: Var) -> Result<Var> {
        let a = self
            .a_learn
            .as_ref()
            .ok_or_else(|| Error::config("a_learn", "signaling model without connectivity"))?;
        let x = tape.concat(&[node_emb, state]);
        let phi = self.phi_net()?.forward(tape, &self.store, x)?;
        let fu = self.f_net()?.forward(tape, &self.store, state)?;
        let fj = tape.gather(fu, Arc::clone(&batch.send));
        let av = tape.param(&self.store, a.id);
        let aij = tape.gather(av, Arc::clone(&batch.pair));
        let m = tape.mul(fj, aij);
        let agg = tape.scatter_add(m, Arc::clone(&batch.recv), batch.n_nodes);
        Ok(tape.add(phi, agg))
    }

    /// Replaces every observed node's embedding by the coordinate-wise median of its
    /// cluster. Clusters smaller than 1% of the nodes are left untouched.
    pub fn bootstrap_embeddings(&mut self, labels: &[usize]) -> Result<()> {
        let n = self.spec.n_nodes;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} nodes", labels.len())));
        }
        let emb = self.embedding_values();
        let k = labels.iter().max().map_or(0, |m| m + 1);
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() || (members.len() as f64) < 0.01 * n as f64 {
                continue;
            }
            let mut med = [0.0; 2];
            for (dim, m) in med.iter_mut().enumerate() {
                let mut vals: Vec<f64> = members.iter().map(|&i| emb[i][dim]).collect();
                *m = crate::math::median(&mut vals);
            }
            for &i in &members {
                self.set_embedding(i, med);
            }
        }
        Ok(())
    }

    fn eval_f(&self, x: Tensor) -> Result<Tensor> {
        self.f_net()?.eval(&self.store, x)
    }
}

impl InteractionModel for GnnModel {
    fn kind(&self) -> SystemKind {
        self.spec.kind
    }

    fn n_nodes(&self) -> usize {
        self.spec.n_nodes
    }

    fn embedding(&self, i: usize) -> [f64; 2] {
        let r = self.embeddings.row(&self.store, i);
        [r[0], r[1]]
    }

    fn band(&self) -> Option<RadiusBand> {
        self.spec.band
    }

    fn messages(&self, queries: &[EdgeQuery]) -> Result<Vec<Vec2>> {
        let kind = self.kind();
        if !kind.is_particle() {
            return Err(Error::config("kind", "only particle models have pairwise messages"));
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let sides = embedding_sides(kind);
        let width = 2 * sides.len() + geo_width(kind);
        let mut data = Vec::with_capacity(queries.len() * width);
        for q in queries {
            for side in sides {
                data.extend_from_slice(match side {
                    Side::Receiver => &q.a_i,
                    Side::Sender => &q.a_j,
                });
            }
            push_geo(kind, &self.spec.scales, q.dx, q.vel_i, q.vel_j, &mut data);
        }
        let y = self.eval_f(Tensor::new(queries.len(), width, data)?)?;
        let s = self.spec.scales.out;
        Ok((0..queries.len()).map(|k| Vec2::new(y.at(k, 0) * s, y.at(k, 1) * s)).collect())
    }

    fn update(&self, emb: &[[f64; 2]], state: &[f64], lap: &[f64]) -> Result<Vec<f64>> {
        let kind = self.kind();
        let s = self.spec.scales;
        let c = kind.derivative_width();
        let n = emb.len();
        let mut data = Vec::new();
        for i in 0..n {
            data.extend_from_slice(&emb[i]);
            match kind {
                SystemKind::Wave => data.push(lap[i] / s.lap),
                SystemKind::Rps => {
                    data.extend(state[i * 3..i * 3 + 3].iter().map(|u| u / s.state));
                    data.extend(lap[i * 3..i * 3 + 3].iter().map(|l| l / s.lap));
                }
                SystemKind::Signaling => data.push(state[i] / s.state),
                _ => return Err(Error::config("kind", "particle models have no update function")),
            }
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let width = data.len() / n;
        let y = self.phi_net()?.eval(&self.store, Tensor::new(n, width, data)?)?;
        debug_assert_eq!(y.cols, c);
        Ok(y.data.iter().map(|v| v * s.out).collect())
    }

    fn signal(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.is_empty() {
            return Ok(Vec::new());
        }
        let s = self.spec.scales;
        let x = Tensor::column(u.iter().map(|v| v / s.state).collect());
        Ok(self.eval_f(x)?.data.iter().map(|v| v * s.out).collect())
    }

    fn probe_ranges(&self) -> (f64, f64) {
        (2.0 * self.spec.scales.lap, 2.0 * self.spec.scales.state)
    }

    fn connectivity(&self) -> Vec<(Edge, f64)> {
        self.a_learn
            .as_ref()
            .map(|a| a.edges.iter().copied().zip(a.weights(&self.store)).collect())
            .unwrap_or_default()
    }

    fn field(&self, positions: &[Vec2], t: usize) -> Result<Option<Vec<f64>>> {
        let Some(net) = &self.field else { return Ok(None) };
        let coords = field_coords(&self.spec, positions, t);
        Ok(Some(net.eval(&self.store, coords)?.data))
    }
}

/// Field-net inputs for the given nodes at frame `t`.
pub(crate) fn field_coords(spec: &ModelSpec, positions: &[Vec2], t: usize) -> Tensor {
    let width = 2 + spec.field_time as usize;
    let mut data = Vec::with_capacity(positions.len() * width);
    for p in positions {
        data.extend_from_slice(&[p.x / spec.box_size, p.y / spec.box_size]);
        if spec.field_time {
            data.push(t as f64 / spec.time_span);
        }
    }
    Tensor {
        rows: positions.len(),
        cols: width,
        data,
    }
}
