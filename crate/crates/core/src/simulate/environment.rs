use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{FieldImage, FieldLayout, FieldSpec, NetworkSpec, SystemConfig, SystemKind};
use crate::dyncore::{build_grid_mesh, Edge, GridMesh, NeighborRule, Neighborhood, RadiusBand, Vec2};
use crate::math;
use crate::prelude::*;
use crate::{Error, Result};

/// Weighted, symmetric connectivity of a signaling network.
///
/// Edges are stored in both directions, sorted by receiver then sender, with zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub n: usize,
    pub edges: Neighborhood,
    pub weights: Vec<f64>,
}

impl Network {
    /// Symmetric Erdős–Rényi graph with uniform weights in `[-weight, weight]`.
    pub fn random<R: Rng>(n: usize, spec: NetworkSpec, rng: &mut R) -> Network {
        let p = if n > 1 {
            (spec.mean_degree / (n - 1) as f64).min(1.0)
        } else {
            0.0
        };
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    let w = spec.weight * (2.0 * rng.random::<f64>() - 1.0);
                    dense[i * n + j] = w;
                    dense[j * n + i] = w;
                }
            }
        }
        Network::from_dense(n, &dense)
    }

    /// Edges are the nonzero entries of `dense` (row = receiver).
    pub fn from_dense(n: usize, dense: &[f64]) -> Network {
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = dense[i * n + j];
                if w != 0.0 && i != j {
                    edges.push(Edge::new(i, j));
                    weights.push(w);
                }
            }
        }
        Network {
            n,
            edges: Neighborhood {
                rule: NeighborRule::Matrix,
                edges,
            },
            weights,
        }
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for (e, &w) in self.edges.edges.iter().zip(&self.weights) {
            a[e.receiver * self.n + e.sender] = w;
        }
        a
    }
}

/// Stationary hidden-field nodes and the image they show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenField {
    pub positions: Vec<Vec2>,
    pub image: FieldImage,
    pub drift: Option<[f64; 2]>,
}

impl HiddenField {
    pub fn build<R: Rng>(spec: &FieldSpec, box_size: f64, rng: &mut R) -> HiddenField {
        let positions = match spec.layout {
            FieldLayout::Random => (0..spec.nodes)
                .map(|_| Vec2::new(rng.random::<f64>() * box_size, rng.random::<f64>() * box_size))
                .collect(),
            FieldLayout::Grid => {
                let side = math::round(math::sqrt(spec.nodes as f64)).max(1.0) as usize;
                (0..side * side)
                    .map(|i| {
                        Vec2::new(
                            ((i % side) as f64 + 0.5) / side as f64 * box_size,
                            ((i / side) as f64 + 0.5) / side as f64 * box_size,
                        )
                    })
                    .collect()
            }
        };
        HiddenField {
            positions,
            image: spec.image.clone(),
            drift: spec.drift,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_static(&self) -> bool {
        self.drift.is_none()
    }

    /// Field value `b_j(t)` of every stationary node.
    pub fn values_at(&self, t: usize) -> Vec<f64> {
        let shift = self.drift.map_or(Vec2::ZERO, |d| Vec2::new(d[0], d[1]) * t as f64);
        self.positions
            .iter()
            .map(|&p| {
                let q = p - shift;
                eval_image(&self.image, math::wrap(q.x, 1.0), math::wrap(q.y, 1.0))
            })
            .collect()
    }
}

/// Image value at a point of the unit square.
pub fn eval_image(image: &FieldImage, x: f64, y: f64) -> f64 {
    use core::f64::consts::PI;
    match image {
        FieldImage::Checkerboard { cells } => {
            let k = *cells as f64;
            let s = math::floor(x * k) as i64 + math::floor(y * k) as i64;
            (s.rem_euclid(2)) as f64
        }
        FieldImage::Sinusoid { k } => 0.5 + 0.5 * math::sin(2.0 * PI * k * x) * math::cos(2.0 * PI * k * y),
        FieldImage::Raster { side, values } => {
            let c = ((x * *side as f64) as usize).min(side - 1);
            let r = ((y * *side as f64) as usize).min(side - 1);
            values[r * side + c]
        }
    }
}

/// Everything a dynamics model needs besides the node states: step size, box,
/// connectivity rule and fixed structures (mesh, network, hidden-field nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub kind: SystemKind,
    pub dt: f64,
    pub box_size: f64,
    pub band: Option<RadiusBand>,
    pub sigma: f64,
    pub beta: f64,
    pub mesh: Option<GridMesh>,
    pub network: Option<Network>,
    pub field: Option<HiddenField>,
}

impl Environment {
    /// Builds fixed structures; random ones are drawn from `rng`.
    pub fn build<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Result<Environment> {
        cfg.validate()?;
        let mesh = if cfg.kind.is_mesh() {
            Some(build_grid_mesh(cfg.side())?)
        } else {
            None
        };
        let network = (cfg.kind == SystemKind::Signaling)
            .then(|| Network::random(cfg.n, cfg.network.unwrap_or_default(), rng));
        let field = cfg
            .hidden_field
            .as_ref()
            .map(|spec| HiddenField::build(spec, cfg.box_size, rng));
        Ok(Environment {
            kind: cfg.kind,
            dt: cfg.dt(),
            box_size: cfg.box_size,
            band: cfg.radius_band(),
            sigma: cfg.sigma,
            beta: cfg.beta,
            mesh,
            network,
            field,
        })
    }

    /// Periodic box to wrap positions into, if any.
    pub fn wrap(&self) -> Option<f64> {
        self.band.and_then(|b| b.periodic)
    }

    pub fn require_band(&self) -> Result<RadiusBand> {
        self.band
            .ok_or_else(|| Error::config("band", "particle systems need a distance band"))
    }

    pub fn require_mesh(&self) -> Result<&GridMesh> {
        self.mesh
            .as_ref()
            .ok_or_else(|| Error::config("kind", "mesh system without a mesh"))
    }

    pub fn require_network(&self) -> Result<&Network> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::config("network", "signaling system without a network"))
    }
}
