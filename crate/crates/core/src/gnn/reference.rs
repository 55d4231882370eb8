//! Model-agnostic evaluation: a per-edge walker that assembles derivatives from a
//! model's learned pieces, and a stub that plugs the true rules into the same slots.

use crate::dyncore::{
    build_radius_neighborhood, laplacian, radius_edges_between, Derivative, Edge, Frame, RadiusBand, Vec2,
};
use crate::math;
use crate::prelude::*;
use crate::simulate::{
    interaction_attraction_repulsion, interaction_boids, interaction_coulomb, interaction_gravity, rps_rate,
    Dynamics, Environment, LatentParams, SystemKind,
};
use crate::{Error, Result};

/// Inputs of one pairwise message; `dx = x_j - x_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeQuery {
    pub a_i: [f64; 2],
    pub a_j: [f64; 2],
    pub dx: Vec2,
    pub vel_i: Vec2,
    pub vel_j: Vec2,
}

impl EdgeQuery {
    /// Message from a sender at `(d, 0)` with both nodes at rest.
    pub fn radial(a_i: [f64; 2], a_j: [f64; 2], d: f64) -> Self {
        EdgeQuery {
            a_i,
            a_j,
            dx: Vec2::new(d, 0.0),
            vel_i: Vec2::ZERO,
            vel_j: Vec2::ZERO,
        }
    }
}

/// The learnable slots of a message-passing model, evaluated in physical units.
pub trait InteractionModel: Send + Sync {
    fn kind(&self) -> SystemKind;

    /// Number of observed nodes.
    fn n_nodes(&self) -> usize;

    fn embedding(&self, i: usize) -> [f64; 2];

    /// Connectivity used for moving particles.
    fn band(&self) -> Option<RadiusBand>;

    /// Pairwise messages `f` (particle kinds).
    fn messages(&self, queries: &[EdgeQuery]) -> Result<Vec<Vec2>>;

    /// Update `Phi` per node. `state` and `lap` hold `derivative_width` values per
    /// node (`lap` is empty for signaling); returns the same width per node.
    fn update(&self, emb: &[[f64; 2]], state: &[f64], lap: &[f64]) -> Result<Vec<f64>>;

    /// Shared signaling message `f(u_j)`.
    fn signal(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// Weighted directed edges of the signaling network.
    fn connectivity(&self) -> Vec<(Edge, f64)>;

    /// Hidden-field values at `positions` and frame `t`, if the model has a field.
    fn field(&self, positions: &[Vec2], t: usize) -> Result<Option<Vec<f64>>>;

    /// Half-widths of the Laplacian and state grids used to probe `update`.
    fn probe_ranges(&self) -> (f64, f64) {
        (1.0, 2.0)
    }

    fn embeddings(&self) -> Vec<[f64; 2]> {
        (0..self.n_nodes()).map(|i| self.embedding(i)).collect()
    }
}

fn values_of(frame: &Frame, width: usize) -> Vec<f64> {
    if frame.arity == width {
        return frame.field.clone();
    }
    (0..frame.len()).flat_map(|i| frame.field_of(i)[..width].to_vec()).collect()
}

/// Assembles the derivative one edge at a time from `model`'s slots, with node `i`
/// using embedding `emb[i]`. Slow but independent of the batched training path.
pub fn reference_derivative<M: InteractionModel + ?Sized>(
    model: &M,
    env: &Environment,
    emb: &[[f64; 2]],
    frame: &Frame,
    t: usize,
) -> Result<Derivative> {
    let kind = model.kind();
    if kind != env.kind {
        return Err(Error::config("kind", "model and environment disagree on the system kind"));
    }
    if emb.len() != frame.len() {
        return Err(Error::Shape(format!("{} embeddings for {} nodes", emb.len(), frame.len())));
    }
    let n = frame.len();
    match kind {
        SystemKind::Wave | SystemKind::Rps => {
            let mesh = env.require_mesh()?;
            let c = kind.derivative_width();
            let state = values_of(frame, c);
            let lap = laplacian(&state, c, mesh);
            let mut out = model.update(emb, &state, &lap.values)?;
            for i in 0..n {
                if !lap.valid[i] {
                    out[i * c..(i + 1) * c].fill(0.0);
                }
            }
            Ok(if kind == SystemKind::Wave {
                Derivative::FieldAcceleration(out)
            } else {
                Derivative::FieldRate(out)
            })
        }
        SystemKind::Signaling => {
            let u = &frame.field;
            let mut rate = model.update(emb, u, &[])?;
            let f = model.signal(u)?;
            for (e, w) in model.connectivity() {
                rate[e.receiver] += w * f[e.sender];
            }
            Ok(Derivative::FieldRate(rate))
        }
        _ => {
            // The model's cutoffs on the environment's box.
            let band = model
                .band()
                .map(|b| RadiusBand {
                    periodic: env.band.and_then(|e| e.periodic),
                    ..b
                })
                .ok_or_else(|| Error::config("band", "particle model without a band"))?;
            let nb = build_radius_neighborhood(&frame.pos, band)?;
            let mut sum = vec![Vec2::ZERO; n];
            let mut count = vec![0usize; n];
            let queries: Vec<EdgeQuery> = nb
                .edges
                .iter()
                .map(|e| EdgeQuery {
                    a_i: emb[e.receiver],
                    a_j: emb[e.sender],
                    dx: band.displacement(frame.pos[e.receiver], frame.pos[e.sender]),
                    vel_i: frame.vel[e.receiver],
                    vel_j: frame.vel[e.sender],
                })
                .collect();
            let msgs = model.messages(&queries)?;
            for (e, m) in nb.edges.iter().zip(msgs) {
                sum[e.receiver] += m;
                count[e.receiver] += 1;
            }
            if let Some(field) = &env.field {
                let b = model
                    .field(&field.positions, t)?
                    .ok_or_else(|| Error::config("field_net", "environment has a hidden field but the model has none"))?;
                let edges = radius_edges_between(&frame.pos, &field.positions, band)?;
                let queries: Vec<EdgeQuery> = edges
                    .iter()
                    .map(|e| EdgeQuery {
                        a_i: emb[e.receiver],
                        a_j: emb[e.receiver],
                        dx: band.displacement(frame.pos[e.receiver], field.positions[e.sender]),
                        vel_i: frame.vel[e.receiver],
                        vel_j: Vec2::ZERO,
                    })
                    .collect();
                let msgs = model.messages(&queries)?;
                for (e, m) in edges.iter().zip(msgs) {
                    sum[e.receiver] += m * b[e.sender];
                    count[e.receiver] += 1;
                }
            }
            if matches!(kind, SystemKind::AttractionRepulsion | SystemKind::Boids) {
                for (s, &c) in sum.iter_mut().zip(&count) {
                    if c > 0 {
                        *s = *s * (1.0 / c as f64);
                    }
                }
            }
            Ok(if kind == SystemKind::AttractionRepulsion {
                Derivative::Velocity(sum)
            } else {
                Derivative::Acceleration(sum)
            })
        }
    }
}

/// A model together with the environment and per-node embeddings it is run with;
/// integrating it is a closed-loop rollout.
pub struct ModelDynamics<'a, M: InteractionModel + ?Sized> {
    pub model: &'a M,
    pub env: Environment,
    pub emb: Vec<[f64; 2]>,
}

impl<'a, M: InteractionModel + ?Sized> ModelDynamics<'a, M> {
    /// Uses the model's own embeddings and its connectivity band.
    pub fn new(model: &'a M, env: Environment) -> Self {
        let emb = model.embeddings();
        ModelDynamics::with_embeddings(model, env, emb)
    }

    pub fn with_embeddings(model: &'a M, mut env: Environment, emb: Vec<[f64; 2]>) -> Self {
        if model.kind().is_particle() {
            // Keep the simulator's box and wrapping but the model's distance cutoffs.
            if let (Some(b), Some(mb)) = (env.band, model.band()) {
                env.band = Some(RadiusBand {
                    d_min: mb.d_min,
                    d_max: mb.d_max,
                    periodic: b.periodic,
                });
            }
        }
        ModelDynamics { model, env, emb }
    }
}

impl<M: InteractionModel + ?Sized> Dynamics for ModelDynamics<'_, M> {
    fn env(&self) -> &Environment {
        &self.env
    }

    fn derivative(&self, frame: &Frame, t: usize) -> Result<Derivative> {
        reference_derivative(self.model, &self.env, &self.emb, frame, t)
    }
}

/// Closed-loop rollout: `steps` model-driven Euler steps from `initial`, returning
/// `steps + 1` frames.
pub fn rollout<M: InteractionModel + ?Sized>(
    model: &M,
    env: &Environment,
    initial: Frame,
    steps: usize,
) -> Result<Vec<Frame>> {
    crate::simulate::integrate(&ModelDynamics::new(model, env.clone()), initial, 0, steps)
}

/// Plugs the true rules into the model slots. Node `i` has embedding `(i, 0)`, so
/// the first embedding coordinate selects a row of the true latents.
#[derive(Debug, Clone)]
pub struct TruthModel {
    pub env: Environment,
    pub latents: LatentParams,
}

impl TruthModel {
    pub fn new(env: Environment, latents: LatentParams) -> Self {
        TruthModel { env, latents }
    }

    fn params(&self, a: [f64; 2]) -> &[f64] {
        let i = (math::round(a[0]).max(0.0) as usize).min(self.latents.len() - 1);
        self.latents.row(i)
    }
}

impl InteractionModel for TruthModel {
    fn kind(&self) -> SystemKind {
        self.env.kind
    }

    fn n_nodes(&self) -> usize {
        self.latents.len()
    }

    fn embedding(&self, i: usize) -> [f64; 2] {
        [i as f64, 0.0]
    }

    fn band(&self) -> Option<RadiusBand> {
        self.env.band
    }

    fn messages(&self, queries: &[EdgeQuery]) -> Result<Vec<Vec2>> {
        let sigma = self.env.sigma;
        Ok(queries
            .iter()
            .map(|q| {
                let d = q.dx.norm();
                match self.env.kind {
                    SystemKind::AttractionRepulsion => {
                        interaction_attraction_repulsion(self.params(q.a_i), d, q.dx, sigma)
                    }
                    SystemKind::Gravity => interaction_gravity(self.params(q.a_j)[0], q.dx, d),
                    SystemKind::Coulomb => {
                        interaction_coulomb(self.params(q.a_i)[0], self.params(q.a_j)[0], q.dx, d)
                    }
                    SystemKind::Boids => interaction_boids(self.params(q.a_i), q.dx, q.vel_j - q.vel_i, d),
                    _ => Vec2::ZERO,
                }
            })
            .collect())
    }

    fn update(&self, emb: &[[f64; 2]], state: &[f64], lap: &[f64]) -> Result<Vec<f64>> {
        let kind = self.env.kind;
        let c = kind.derivative_width();
        let mut out = vec![0.0; emb.len() * c];
        for (i, &a) in emb.iter().enumerate() {
            let p = self.params(a);
            match kind {
                SystemKind::Wave => out[i] = p[0] * lap[i],
                SystemKind::Rps => {
                    let r = rps_rate(p[0], self.env.beta, &state[i * 3..i * 3 + 3], &lap[i * 3..i * 3 + 3]);
                    out[i * 3..i * 3 + 3].copy_from_slice(&r);
                }
                SystemKind::Signaling => out[i] = -p[0] * state[i] + p[1] * math::tanh(state[i]),
                _ => return Err(Error::config("kind", "particle models have no update function")),
            }
        }
        Ok(out)
    }

    fn signal(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(u.iter().map(|&x| math::tanh(x)).collect())
    }

    fn connectivity(&self) -> Vec<(Edge, f64)> {
        self.env
            .network
            .as_ref()
            .map(|net| net.edges.edges.iter().copied().zip(net.weights.iter().copied()).collect())
            .unwrap_or_default()
    }

    fn field(&self, _positions: &[Vec2], t: usize) -> Result<Option<Vec<f64>>> {
        Ok(self.env.field.as_ref().map(|f| f.values_at(t)))
    }
}
