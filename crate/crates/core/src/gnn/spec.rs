use serde::{Deserialize, Serialize};

use crate::dyncore::RadiusBand;
use crate::neuralnet::{GradMode, MlpSpec};
use crate::prelude::*;
use crate::simulate::{SystemKind, Trajectory};
use crate::{Error, Result};

/// How messages arriving at a node are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
    /// Fixed discrete Laplacian over the mesh (f and aggregation are not learned).
    Laplacian,
}

/// Fixed normalization constants so network inputs and outputs are O(1).
///
/// Inputs are divided by their scale; network outputs are multiplied by `out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    /// Length scale for `d` and `dx` (the upper edge of the distance band).
    pub length: f64,
    pub vel: f64,
    pub state: f64,
    pub lap: f64,
    pub out: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Scales {
            length: 1.0,
            vel: 1.0,
            state: 1.0,
            lap: 1.0,
            out: 1.0,
        }
    }
}

/// Architecture of a [`super::GnnModel`]; which nets exist is fixed by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: SystemKind,
    /// Observed nodes; embedding rows `n_nodes..n_nodes + n_ghosts` belong to ghosts.
    pub n_nodes: usize,
    pub n_ghosts: usize,
    pub f_net: Option<MlpSpec>,
    pub phi_net: Option<MlpSpec>,
    /// Coordinate network for a hidden field, `b(x, y)` or `b(x, y, t)`.
    pub field_net: Option<MlpSpec>,
    pub field_time: bool,
    /// Connectivity used by the learned model; may differ from the simulator's.
    pub band: Option<RadiusBand>,
    pub aggregation: Aggregation,
    pub scales: Scales,
    /// Normalizers for the field net's coordinate and time inputs.
    pub box_size: f64,
    pub time_span: f64,
}

/// Training cutoff for the inverse-square kinds: close encounters are rare and
/// their accelerations would dominate the loss.
pub const SINGULAR_D_MIN: f64 = 0.02;

impl ModelSpec {
    /// Default wiring for `kind` with the reference layer sizes.
    ///
    /// `band` is the simulator's band (particle kinds), which the model reuses
    /// except for gravity and coulomb where `d_min` is raised to [`SINGULAR_D_MIN`].
    pub fn new(kind: SystemKind, n_nodes: usize, band: Option<RadiusBand>) -> Self {
        let (f_net, phi_net, aggregation) = match kind {
            SystemKind::AttractionRepulsion => (Some(MlpSpec::relu(5, 128, 2, 5)), None, Aggregation::Mean),
            SystemKind::Gravity => (Some(MlpSpec::relu(5, 128, 2, 5)), None, Aggregation::Sum),
            SystemKind::Coulomb => (Some(MlpSpec::relu(7, 256, 2, 5)), None, Aggregation::Sum),
            SystemKind::Boids => (Some(MlpSpec::relu(9, 256, 2, 5)), None, Aggregation::Mean),
            SystemKind::Wave => (None, Some(MlpSpec::relu(3, 16, 1, 5)), Aggregation::Laplacian),
            SystemKind::Rps => (None, Some(MlpSpec::relu(8, 64, 3, 5)), Aggregation::Laplacian),
            SystemKind::Signaling => (
                Some(MlpSpec::relu(1, 64, 1, 3)),
                Some(MlpSpec::relu(3, 64, 1, 3)),
                Aggregation::Sum,
            ),
        };
        let band = band.map(|b| match kind {
            SystemKind::Gravity | SystemKind::Coulomb => RadiusBand {
                d_min: b.d_min.max(SINGULAR_D_MIN),
                ..b
            },
            _ => b,
        });
        let length = band.map_or(1.0, |b| b.d_max);
        ModelSpec {
            kind,
            n_nodes,
            n_ghosts: 0,
            f_net,
            phi_net,
            field_net: None,
            field_time: false,
            band,
            aggregation,
            scales: Scales {
                length,
                ..Scales::default()
            },
            box_size: 1.0,
            time_span: 1.0,
        }
    }

    /// Default wiring sized for the given training data, with scales estimated from it.
    pub fn for_data(data: &[Trajectory]) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::InvalidInput("no training trajectories".into()))?;
        let env = first.environment()?;
        let mut spec = ModelSpec::new(first.kind(), first.n(), env.band);
        spec.box_size = env.box_size;
        if let Some(field) = &first.config.hidden_field {
            spec.field_time = field.drift.is_some();
            spec.field_net = Some(MlpSpec::periodic(2 + spec.field_time as usize, 128, 1, 5));
            spec.time_span = first.len().max(1) as f64;
        }
        spec.scales = estimate_scales(&spec, data);
        Ok(spec)
    }

    /// Replaces the hidden width of every learnable net.
    pub fn with_hidden(mut self, f: usize, phi: usize) -> Self {
        if let Some(s) = &mut self.f_net {
            s.hidden_dim = f;
        }
        if let Some(s) = &mut self.phi_net {
            s.hidden_dim = phi;
        }
        self
    }

    pub fn with_ghosts(mut self, n_ghosts: usize) -> Self {
        self.n_ghosts = n_ghosts;
        self
    }

    pub fn embedding_rows(&self) -> usize {
        self.n_nodes + self.n_ghosts
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        let need = |net: &Option<MlpSpec>, name: &'static str, inputs: usize, outputs: usize| -> Result<()> {
            let s = net.ok_or_else(|| Error::config(name, format!("{} models need {name}", kind.name())))?;
            s.validate()?;
            if s.in_dim != inputs || s.out_dim != outputs {
                return Err(Error::config(
                    name,
                    format!("{} expects {inputs} inputs and {outputs} outputs", kind.name()),
                ));
            }
            Ok(())
        };
        match kind {
            SystemKind::AttractionRepulsion | SystemKind::Gravity => need(&self.f_net, "f_net", 5, 2)?,
            SystemKind::Coulomb => need(&self.f_net, "f_net", 7, 2)?,
            SystemKind::Boids => need(&self.f_net, "f_net", 9, 2)?,
            SystemKind::Wave => need(&self.phi_net, "phi_net", 3, 1)?,
            SystemKind::Rps => need(&self.phi_net, "phi_net", 8, 3)?,
            SystemKind::Signaling => {
                need(&self.f_net, "f_net", 1, 1)?;
                need(&self.phi_net, "phi_net", 3, 1)?;
            }
        }
        let expected = match kind {
            SystemKind::AttractionRepulsion | SystemKind::Boids => Aggregation::Mean,
            SystemKind::Gravity | SystemKind::Coulomb | SystemKind::Signaling => Aggregation::Sum,
            SystemKind::Wave | SystemKind::Rps => Aggregation::Laplacian,
        };
        if self.aggregation != expected {
            return Err(Error::config("aggregation", format!("{} uses {expected:?}", kind.name())));
        }
        if kind.is_particle() && self.band.is_none() {
            return Err(Error::config("band", "particle models need a distance band"));
        }
        if !kind.is_particle() && self.n_ghosts > 0 {
            return Err(Error::config("ghost_count", "ghosts only apply to moving particles"));
        }
        if let Some(f) = &self.field_net {
            if kind != SystemKind::AttractionRepulsion {
                return Err(Error::config("field_net", "hidden fields are only modeled for attraction-repulsion"));
            }
            f.validate()?;
            if f.in_dim != 2 + self.field_time as usize || f.out_dim != 1 {
                return Err(Error::config("field_net", "field net maps (x, y[, t]) to one value"));
            }
        }
        let s = self.scales;
        if [s.length, s.vel, s.state, s.lap, s.out].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("scales", "scales must be positive and finite"));
        }
        Ok(())
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        if v.is_finite() {
            s += v * v;
            n += 1;
        }
    }
    if n == 0 || s == 0.0 {
        1.0
    } else {
        crate::math::sqrt(s / n as f64)
    }
}

/// RMS-based scales from (a subsample of) the training frames.
pub fn estimate_scales(spec: &ModelSpec, data: &[Trajectory]) -> Scales {
    let mut scales = spec.scales;
    let mut targets = Vec::new();
    let mut vels = Vec::new();
    let mut states = Vec::new();
    let mut laps = Vec::new();
    for traj in data {
        let stride = (traj.len() / 32).max(1);
        let env = traj.environment().ok();
        for t in (0..traj.len().saturating_sub(1)).step_by(stride) {
            let target = traj.target(t);
            let frame = &traj.frames[t];
            if let Some(mesh) = env.as_ref().and_then(|e| e.mesh.as_ref()) {
                let c = spec.kind.derivative_width();
                let vals: Vec<f64> = (0..frame.len()).flat_map(|i| frame.field_of(i)[..c].to_vec()).collect();
                let lap = crate::dyncore::laplacian(&vals, c, mesh);
                for i in mesh.interior() {
                    laps.extend_from_slice(lap.at(i));
                }
                let tv = target.values();
                for i in mesh.interior() {
                    targets.extend_from_slice(&tv[i * c..(i + 1) * c]);
                }
                states.extend(vals);
            } else {
                let tv = target.values();
                // Forces from pairs under the model's cutoff are out of its reach and
                // out of the loss, so they do not set the scale either.
                let hidden = match &env {
                    Some(e) if spec.kind.is_particle() => {
                        super::batch::hidden_close_pairs(spec, e, &frame.pos).unwrap_or_default()
                    }
                    _ => Vec::new(),
                };
                let w = tv.len() / frame.len().max(1);
                for i in 0..frame.len() {
                    if !hidden.get(i).copied().unwrap_or(false) {
                        targets.extend_from_slice(&tv[i * w..(i + 1) * w]);
                    }
                }
                states.extend(frame.field.iter().copied());
            }
            vels.extend(frame.vel.iter().flat_map(|v| [v.x, v.y]));
        }
    }
    scales.out = rms(targets.into_iter());
    scales.vel = rms(vels.into_iter());
    scales.state = rms(states.into_iter());
    scales.lap = rms(laps.into_iter());
    scales
}

/// Optimization protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Learning rate of epoch `e` is `lr * lr_decay^e`.
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    /// Passes over the data per epoch, each with fresh random rotations
    /// (rotation-invariant kinds only; other kinds make a single pass).
    #[serde(default = "defaults::n_rotations")]
    pub n_rotations: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub ghost_count: usize,
    #[serde(default = "defaults::yes")]
    pub bootstrap: bool,
    #[serde(default = "defaults::bootstrap_every")]
    pub bootstrap_every: usize,
    /// Consecutive predicted steps per loss term.
    #[serde(default = "defaults::multi_step")]
    pub multi_step: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grad_mode: GradMode,
    /// Caps the number of optimizer steps per epoch.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
    /// Lets signaling train with a single-step loss, to reproduce its instability.
    #[serde(default)]
    pub allow_single_step_signaling: bool,
}

mod defaults {
    pub fn epochs() -> usize {
        20
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn lr_decay() -> f64 {
        1.0
    }
    pub fn n_rotations() -> usize {
        200
    }
    pub fn yes() -> bool {
        true
    }
    pub fn bootstrap_every() -> usize {
        5
    }
    pub fn multi_step() -> usize {
        1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            lr_decay: defaults::lr_decay(),
            n_rotations: defaults::n_rotations(),
            noise_sigma: 0.0,
            ghost_count: 0,
            bootstrap: true,
            bootstrap_every: defaults::bootstrap_every(),
            multi_step: defaults::multi_step(),
            seed: 0,
            grad_mode: GradMode::Mean,
            max_batches_per_epoch: None,
            allow_single_step_signaling: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for `kind`; signaling trains on two consecutive steps.
    pub fn for_kind(kind: SystemKind) -> Self {
        TrainConfig {
            multi_step: if kind == SystemKind::Signaling { 2 } else { 1 },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self, kind: SystemKind) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay", "must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be >= 0"));
        }
        if self.multi_step == 0 {
            return Err(Error::config("multi_step", "must be at least 1"));
        }
        if kind == SystemKind::Signaling && self.multi_step < 2 && !self.allow_single_step_signaling {
            return Err(Error::config(
                "multi_step",
                "signaling models are only stable when trained on at least two consecutive steps",
            ));
        }
        if self.multi_step > 1 && !matches!(kind, SystemKind::Rps | SystemKind::Signaling) {
            return Err(Error::config("multi_step", "multi-step losses are supported for rps and signaling only"));
        }
        if self.ghost_count > 0 && !kind.is_particle() {
            return Err(Error::config("ghost_count", "ghosts only apply to moving particles"));
        }
        if self.bootstrap && self.bootstrap_every == 0 {
            return Err(Error::config("bootstrap_every", "must be at least 1"));
        }
        Ok(())
    }
}
