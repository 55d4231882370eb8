use serde::{Deserialize, Serialize};

use crate::dyncore::RadiusBand;
use crate::prelude::*;
use crate::{Error, Result};

/// The seven simulated system families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    AttractionRepulsion,
    Gravity,
    Coulomb,
    Boids,
    Wave,
    Rps,
    Signaling,
}

/// Whether the learned quantity is a first or second time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl SystemKind {
    pub const ALL: [SystemKind; 7] = [
        SystemKind::AttractionRepulsion,
        SystemKind::Gravity,
        SystemKind::Coulomb,
        SystemKind::Boids,
        SystemKind::Wave,
        SystemKind::Rps,
        SystemKind::Signaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::AttractionRepulsion => "attraction_repulsion",
            SystemKind::Gravity => "gravity",
            SystemKind::Coulomb => "coulomb",
            SystemKind::Boids => "boids",
            SystemKind::Wave => "wave",
            SystemKind::Rps => "rps",
            SystemKind::Signaling => "signaling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("kind", format!("unknown system kind `{s}`")))
    }

    /// Names of the per-node latent parameters, in storage order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            SystemKind::AttractionRepulsion => &["a", "b", "c", "d"],
            SystemKind::Gravity => &["m"],
            SystemKind::Coulomb => &["q"],
            SystemKind::Boids => &["a", "c", "s"],
            SystemKind::Wave | SystemKind::Rps => &["a"],
            SystemKind::Signaling => &["b", "c"],
        }
    }

    pub fn is_particle(self) -> bool {
        matches!(
            self,
            SystemKind::AttractionRepulsion
                | SystemKind::Gravity
                | SystemKind::Coulomb
                | SystemKind::Boids
        )
    }

    pub fn is_mesh(self) -> bool {
        matches!(self, SystemKind::Wave | SystemKind::Rps)
    }

    pub fn order(self) -> Order {
        match self {
            SystemKind::AttractionRepulsion | SystemKind::Rps | SystemKind::Signaling => Order::First,
            _ => Order::Second,
        }
    }

    /// Field values stored per node (wave keeps `[u, du/dt]`).
    pub fn field_arity(self) -> usize {
        match self {
            SystemKind::Wave => 2,
            SystemKind::Rps => 3,
            SystemKind::Signaling => 1,
            _ => 0,
        }
    }

    /// Values per node in the learned derivative.
    pub fn derivative_width(self) -> usize {
        match self {
            SystemKind::Wave | SystemKind::Signaling => 1,
            SystemKind::Rps => 3,
            _ => 2,
        }
    }

    pub fn rotation_invariant(self) -> bool {
        self.is_particle()
    }

    pub fn default_dt(self) -> f64 {
        match self {
            SystemKind::AttractionRepulsion => 0.005,
            SystemKind::Gravity | SystemKind::Coulomb => 1e-3,
            SystemKind::Boids => 0.5,
            SystemKind::Wave => 0.1,
            SystemKind::Rps => 0.01,
            SystemKind::Signaling => 1e-2,
        }
    }

    pub fn default_band(self) -> Option<BandSpec> {
        let band = |d_min, d_max, periodic| {
            Some(BandSpec {
                d_min,
                d_max,
                periodic,
            })
        };
        match self {
            SystemKind::AttractionRepulsion => band(0.002, 0.075, true),
            SystemKind::Gravity => band(0.001, 0.3, false),
            SystemKind::Coulomb => band(0.001, 0.3, true),
            SystemKind::Boids => band(0.001, 0.04, true),
            _ => None,
        }
    }
}

/// Serializable distance band; `periodic` wraps on the configured box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub periodic: bool,
}

impl BandSpec {
    pub fn to_band(self, box_size: f64) -> RadiusBand {
        RadiusBand::new(self.d_min, self.d_max, self.periodic.then_some(box_size))
    }
}

/// Axis-aligned block of grid cells `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }
}

/// How per-node latent parameters are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentSpec {
    /// Discrete types; nodes are split into equal contiguous blocks, one per type.
    Types { params: Vec<Vec<f64>> },
    /// Independent uniform draws per node and parameter.
    Uniform { ranges: Vec<[f64; 2]> },
    /// Mesh only: types laid out as rectangular patches over the grid.
    Patches {
        params: Vec<Vec<f64>>,
        #[serde(default)]
        obstacles: Vec<Rect>,
    },
    /// Mesh only: a smooth single-parameter map spanning `range`.
    Smooth {
        range: [f64; 2],
        #[serde(default)]
        obstacles: Vec<Rect>,
    },
}

/// Image shown by hidden stationary field nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldImage {
    Checkerboard { cells: usize },
    /// `0.5 + 0.5 sin(2 pi k x) cos(2 pi k y)`.
    Sinusoid { k: f64 },
    /// Row-major `side x side` raster over the unit square.
    Raster { side: usize, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldLayout {
    Random,
    Grid,
}

/// Hidden field of stationary nodes whose attraction-repulsion messages are scaled
/// by the image value `b_j` at their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub nodes: usize,
    pub layout: FieldLayout,
    pub image: FieldImage,
    /// When set, the image translates by this much per time step (a movie).
    #[serde(default)]
    pub drift: Option<[f64; 2]>,
}

/// Random graph used by the signaling system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub mean_degree: f64,
    /// Weights are uniform in `[-weight, weight]`.
    pub weight: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            mean_degree: 18.0,
            weight: 1.0,
        }
    }
}

/// Knobs of the per-kind initial-state recipes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
}

fn default_box() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    0.005
}
fn default_beta() -> f64 {
    0.7
}

/// Full description of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Node count; a perfect square for mesh systems.
    pub n: usize,
    pub steps: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    pub seed: u64,
    pub latents: LatentSpec,
    #[serde(default)]
    pub band: Option<BandSpec>,
    #[serde(default = "default_box")]
    pub box_size: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub hidden_field: Option<FieldSpec>,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub init: InitSpec,
}

impl SystemConfig {
    /// A config with all optional fields at their defaults.
    pub fn new(kind: SystemKind, n: usize, steps: usize, seed: u64, latents: LatentSpec) -> Self {
        SystemConfig {
            kind,
            n,
            steps,
            dt: None,
            seed,
            latents,
            band: None,
            box_size: 1.0,
            sigma: default_sigma(),
            beta: default_beta(),
            hidden_field: None,
            network: None,
            init: InitSpec::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.kind.default_dt())
    }

    pub fn band_spec(&self) -> Option<BandSpec> {
        self.band.or_else(|| self.kind.default_band())
    }

    pub fn radius_band(&self) -> Option<RadiusBand> {
        self.band_spec().map(|b| b.to_band(self.box_size))
    }

    pub fn side(&self) -> usize {
        let s = crate::math::round(crate::math::sqrt(self.n as f64)) as usize;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        let dt = self.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("dt", format!("must be positive, got {dt}")));
        }
        if !(self.box_size > 0.0) {
            return Err(Error::config("box_size", "must be positive"));
        }
        if self.kind.is_mesh() {
            let s = self.side();
            if s * s != self.n || s < 3 {
                return Err(Error::config("n", "mesh systems need a square node count >= 9"));
            }
        }
        if self.kind.is_particle() && self.band_spec().is_none() {
            return Err(Error::config("band", "particle systems need a distance band"));
        }
        if self.hidden_field.is_some() && self.kind != SystemKind::AttractionRepulsion {
            return Err(Error::config(
                "hidden_field",
                "only supported for attraction_repulsion",
            ));
        }
        if let Some(f) = &self.hidden_field {
            if f.nodes == 0 {
                return Err(Error::config("hidden_field.nodes", "must be positive"));
            }
            if let FieldImage::Raster { side, values } = &f.image {
                if *side == 0 || values.len() != side * side {
                    return Err(Error::config("hidden_field.image", "raster needs side^2 values"));
                }
            }
        }
        if self.kind == SystemKind::Rps && !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0, 1]"));
        }
        let p = self.kind.param_names().len();
        let check_rows = |rows: &[Vec<f64>]| -> Result<()> {
            if rows.is_empty() {
                return Err(Error::config("latents", "needs at least one type"));
            }
            if let Some(r) = rows.iter().find(|r| r.len() != p) {
                return Err(Error::config(
                    "latents",
                    format!("expected {p} parameters per type, got {}", r.len()),
                ));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config("latents", "parameters must be finite"));
            }
            Ok(())
        };
        match &self.latents {
            LatentSpec::Types { params } => check_rows(params)?,
            LatentSpec::Patches { params, .. } => {
                if !self.kind.is_mesh() {
                    return Err(Error::config("latents", "patches require a mesh system"));
                }
                check_rows(params)?
            }
            LatentSpec::Uniform { ranges } => {
                if ranges.len() != p {
                    return Err(Error::config("latents", format!("expected {p} ranges")));
                }
                if ranges.iter().any(|r| !(r[0] <= r[1])) {
                    return Err(Error::config("latents", "ranges must be ordered"));
                }
            }
            LatentSpec::Smooth { range, .. } => {
                if !self.kind.is_mesh() || p != 1 {
                    return Err(Error::config("latents", "smooth maps require a mesh system"));
                }
                if !(range[0] <= range[1]) {
                    return Err(Error::config("latents", "range must be ordered"));
                }
            }
        }
        Ok(())
    }
}
