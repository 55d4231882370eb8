use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Order, SystemConfig, SystemKind};
use super::environment::{Environment, HiddenField, Network};
use super::init::initial_frame;
use super::latents::{assign_latents, LatentParams};
use super::system::{integrate, GroundTruth};
use crate::dyncore::{Derivative, Frame, Vec2};
use crate::prelude::*;
use crate::{Error, Result};

/// Ground-truth hidden field: node positions and `b_j` per frame (a single row
/// when the field is static).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTruth {
    pub positions: Vec<Vec2>,
    pub values: Vec<Vec<f64>>,
}

impl FieldTruth {
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t.min(self.values.len() - 1)]
    }
}

/// A simulated time series plus the ground truth needed to score a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SystemConfig,
    pub frames: Vec<Frame>,
    pub latents: LatentParams,
    /// Dense `n x n` connectivity (signaling only), row = receiver.
    pub connectivity: Option<Vec<f64>>,
    pub field: Option<FieldTruth>,
}

// Independent RNG streams so that, e.g., changing the initial-state recipe does
// not reshuffle the latents.
const STREAM_LATENTS: u64 = 1;
const STREAM_ENV: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SERIES: u64 = 100;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Latents, environment and initial frame for `cfg`, drawn from its seed.
pub fn setup(cfg: &SystemConfig) -> Result<(LatentParams, Environment, Frame)> {
    cfg.validate()?;
    let lat = assign_latents(cfg, &mut rng_for(cfg.seed, STREAM_LATENTS))?;
    let env = Environment::build(cfg, &mut rng_for(cfg.seed, STREAM_ENV))?;
    let init = initial_frame(cfg, &env, &lat, &mut rng_for(cfg.seed, STREAM_INIT));
    Ok((lat, env, init))
}

/// Runs the ground-truth simulator; the trajectory has `cfg.steps` frames.
pub fn simulate(cfg: &SystemConfig) -> Result<Trajectory> {
    let (lat, env, init) = setup(cfg)?;
    simulate_from(cfg, env, lat, init)
}

/// Like [`simulate`] but from explicit structures and initial frame.
pub fn simulate_from(
    cfg: &SystemConfig,
    env: Environment,
    latents: LatentParams,
    initial: Frame,
) -> Result<Trajectory> {
    cfg.validate()?;
    if initial.len() != latents.len() {
        return Err(Error::Shape(format!(
            "initial frame has {} nodes, latents {}",
            initial.len(),
            latents.len()
        )));
    }
    let gt = GroundTruth::new(env, latents);
    let frames = integrate(&gt, initial, 0, cfg.steps - 1)?;
    let GroundTruth { env, latents } = gt;
    let connectivity = env.network.as_ref().map(Network::dense);
    let field = env.field.as_ref().map(|f| FieldTruth {
        positions: f.positions.clone(),
        values: if f.is_static() {
            vec![f.values_at(0)]
        } else {
            (0..frames.len()).map(|t| f.values_at(t)).collect()
        },
    });
    Ok(Trajectory {
        config: cfg.clone(),
        frames,
        latents,
        connectivity,
        field,
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn kind(&self) -> SystemKind {
        self.config.kind
    }

    pub fn n(&self) -> usize {
        self.frames.first().map_or(self.config.n, Frame::len)
    }

    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    /// Rebuilds the environment, taking network and field nodes from the stored
    /// ground truth rather than redrawing them.
    pub fn environment(&self) -> Result<Environment> {
        let mut env = Environment::build(&self.config, &mut rng_for(self.config.seed, STREAM_ENV))?;
        if let Some(a) = &self.connectivity {
            env.network = Some(Network::from_dense(self.n(), a));
        }
        if let (Some(truth), Some(spec)) = (&self.field, &self.config.hidden_field) {
            env.field = Some(HiddenField {
                positions: truth.positions.clone(),
                image: spec.image.clone(),
                drift: spec.drift,
            });
        }
        Ok(env)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth::new(self.environment()?, self.latents.clone()))
    }

    /// Observed derivative at frame `t` (`t + 1 < len`), recovered from consecutive
    /// frames the same way a model would see it in recorded data.
    pub fn target(&self, t: usize) -> Derivative {
        let (a, b) = (&self.frames[t], &self.frames[t + 1]);
        let dt = self.dt();
        let kind = self.kind();
        match (kind.is_particle(), kind.order()) {
            (true, Order::First) => Derivative::Velocity(b.vel.clone()),
            (true, Order::Second) => Derivative::Acceleration(
                a.vel.iter().zip(&b.vel).map(|(&v0, &v1)| (v1 - v0) * (1.0 / dt)).collect(),
            ),
            (false, Order::Second) => {
                let k = a.arity / 2;
                let mut acc = Vec::with_capacity(a.len() * k);
                for i in 0..a.len() {
                    for c in 0..k {
                        acc.push((b.field_of(i)[k + c] - a.field_of(i)[k + c]) / dt);
                    }
                }
                Derivative::FieldAcceleration(acc)
            }
            (false, Order::First) => Derivative::FieldRate(
                a.field.iter().zip(&b.field).map(|(&u0, &u1)| (u1 - u0) / dt).collect(),
            ),
        }
    }
}

/// `count` series sharing latents and environment (network, field) but each with
/// its own initial state. Series 0 equals [`simulate`].
pub fn simulate_series(cfg: &SystemConfig, count: usize) -> Result<Vec<Trajectory>> {
    let (lat, env, init) = setup(cfg)?;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = if k == 0 {
            init.clone()
        } else {
            initial_frame(cfg, &env, &lat, &mut rng_for(cfg.seed, STREAM_SERIES + k as u64))
        };
        out.push(simulate_from(cfg, env.clone(), lat.clone(), start)?);
    }
    Ok(out)
}
