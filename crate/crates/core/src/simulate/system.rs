use super::config::SystemKind;
use super::environment::Environment;
use super::interactions::{
    interaction_attraction_repulsion, interaction_boids, interaction_coulomb, interaction_gravity,
};
use super::latents::LatentParams;
use crate::dyncore::{
    build_radius_neighborhood, euler_step_in_place, laplacian, radius_edges_between, Derivative,
    Frame, Vec2,
};
use crate::math;
use crate::prelude::*;
use crate::{Error, Result};

/// Anything that maps a frame at time `t` to its time derivative: the ground-truth
/// simulator or a learned model.
pub trait Dynamics {
    fn env(&self) -> &Environment;

    fn derivative(&self, frame: &Frame, t: usize) -> Result<Derivative>;
}

/// Integrates `steps` semi-implicit Euler steps from `initial` (at time `t0`).
/// Returns `steps + 1` frames, the first being `initial`.
pub fn integrate<D: Dynamics + ?Sized>(
    dynamics: &D,
    initial: Frame,
    t0: usize,
    steps: usize,
) -> Result<Vec<Frame>> {
    let env = dynamics.env();
    let mut frames = Vec::with_capacity(steps + 1);
    let mut frame = initial;
    for s in 0..steps {
        let t = t0 + s;
        let deriv = dynamics.derivative(&frame, t)?;
        let mut next = frame.clone();
        euler_step_in_place(&mut next, &deriv, env.dt, env.wrap());
        if let Some(i) = next.first_non_finite() {
            return Err(Error::Diverged {
                step: t + 1,
                detail: format!("node {i} became non-finite"),
            });
        }
        frames.push(frame);
        frame = next;
    }
    frames.push(frame);
    Ok(frames)
}

/// The reference simulator: Table-style interaction, aggregation and update rules
/// evaluated with the true latent parameters.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub env: Environment,
    pub latents: LatentParams,
}

impl GroundTruth {
    pub fn new(env: Environment, latents: LatentParams) -> Self {
        GroundTruth { env, latents }
    }

    fn particle_derivative(&self, frame: &Frame, t: usize) -> Result<Derivative> {
        let env = &self.env;
        let band = env.require_band()?;
        let nb = build_radius_neighborhood(&frame.pos, band)?;
        let n = frame.len();
        let mut out = vec![Vec2::ZERO; n];
        let mut count = vec![0usize; n];
        for e in &nb.edges {
            let (i, j) = (e.receiver, e.sender);
            let dx = band.displacement(frame.pos[i], frame.pos[j]);
            let d = dx.norm();
            let f = match env.kind {
                SystemKind::AttractionRepulsion => {
                    interaction_attraction_repulsion(self.latents.row(i), d, dx, env.sigma)
                }
                SystemKind::Gravity => interaction_gravity(self.latents.row(j)[0], dx, d),
                SystemKind::Coulomb => {
                    interaction_coulomb(self.latents.row(i)[0], self.latents.row(j)[0], dx, d)
                }
                SystemKind::Boids => {
                    interaction_boids(self.latents.row(i), dx, frame.vel[j] - frame.vel[i], d)
                }
                _ => unreachable!(),
            };
            out[i] += f;
            count[i] += 1;
        }
        if let Some(field) = &env.field {
            let b = field.values_at(t);
            for e in radius_edges_between(&frame.pos, &field.positions, band)? {
                let (i, j) = (e.receiver, e.sender);
                let dx = band.displacement(frame.pos[i], field.positions[j]);
                let d = dx.norm();
                out[i] += interaction_attraction_repulsion(self.latents.row(i), d, dx, env.sigma) * b[j];
                count[i] += 1;
            }
        }
        let mean = matches!(env.kind, SystemKind::AttractionRepulsion | SystemKind::Boids);
        if mean {
            for (o, &c) in out.iter_mut().zip(&count) {
                if c > 0 {
                    *o = *o * (1.0 / c as f64);
                }
            }
        }
        Ok(if env.kind == SystemKind::AttractionRepulsion {
            Derivative::Velocity(out)
        } else {
            Derivative::Acceleration(out)
        })
    }

    fn wave_derivative(&self, frame: &Frame) -> Result<Derivative> {
        let mesh = self.env.require_mesh()?;
        let u: Vec<f64> = (0..frame.len()).map(|i| frame.field_of(i)[0]).collect();
        let lap = laplacian(&u, 1, mesh);
        let acc = (0..frame.len())
            .map(|i| {
                if lap.valid[i] {
                    self.latents.row(i)[0] * lap.values[i]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Derivative::FieldAcceleration(acc))
    }

    fn rps_derivative(&self, frame: &Frame) -> Result<Derivative> {
        let mesh = self.env.require_mesh()?;
        let lap = laplacian(&frame.field, 3, mesh);
        let mut rate = vec![0.0; frame.field.len()];
        for i in 0..frame.len() {
            if !lap.valid[i] {
                continue;
            }
            let r = rps_rate(self.latents.row(i)[0], self.env.beta, frame.field_of(i), lap.at(i));
            rate[i * 3..i * 3 + 3].copy_from_slice(&r);
        }
        Ok(Derivative::FieldRate(rate))
    }

    fn signaling_derivative(&self, frame: &Frame) -> Result<Derivative> {
        let net = self.env.require_network()?;
        let n = frame.len();
        let u = &frame.field;
        let mut rate: Vec<f64> = (0..n)
            .map(|i| {
                let p = self.latents.row(i);
                -p[0] * u[i] + p[1] * math::tanh(u[i])
            })
            .collect();
        for (e, &w) in net.edges.edges.iter().zip(&net.weights) {
            rate[e.receiver] += w * math::tanh(u[e.sender]);
        }
        Ok(Derivative::FieldRate(rate))
    }
}

/// Per-node reaction-diffusion rate for fields `(u, v, w)` with Laplacians `lap`.
pub fn rps_rate(a: f64, beta: f64, s: &[f64], lap: &[f64]) -> [f64; 3] {
    let p = s[0] + s[1] + s[2];
    let mut r = [0.0; 3];
    for k in 0..3 {
        r[k] = a * lap[k] + s[k] * (1.0 - p - beta * s[(k + 1) % 3]);
    }
    r
}

impl Dynamics for GroundTruth {
    fn env(&self) -> &Environment {
        &self.env
    }

    fn derivative(&self, frame: &Frame, t: usize) -> Result<Derivative> {
        if frame.len() != self.latents.len() {
            return Err(Error::Shape(format!(
                "frame has {} nodes but {} latent rows",
                frame.len(),
                self.latents.len()
            )));
        }
        match self.env.kind {
            SystemKind::Wave => self.wave_derivative(frame),
            SystemKind::Rps => self.rps_derivative(frame),
            SystemKind::Signaling => self.signaling_derivative(frame),
            _ => self.particle_derivative(frame, t),
        }
    }
}
