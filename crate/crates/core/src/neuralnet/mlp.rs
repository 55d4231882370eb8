use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Act, ParamId, ParamStore, Tape, Tensor, Var};
use crate::math;
use crate::prelude::*;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Sine activations `sin(omega0 * z)`.
    Periodic { omega0: f64 },
}

/// Layer sizes of a multi-layer perceptron with `n_layers` linear layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub n_layers: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn relu(in_dim: usize, hidden_dim: usize, out_dim: usize, n_layers: usize) -> Self {
        MlpSpec {
            in_dim,
            hidden_dim,
            out_dim,
            n_layers,
            activation: Activation::Relu,
        }
    }

    pub fn periodic(in_dim: usize, hidden_dim: usize, out_dim: usize, n_layers: usize) -> Self {
        MlpSpec {
            in_dim,
            hidden_dim,
            out_dim,
            n_layers,
            activation: Activation::Periodic { omega0: 30.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::config("n_layers", "an MLP needs at least 2 linear layers"));
        }
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::config("mlp", "layer widths must be positive"));
        }
        Ok(())
    }

    /// `in*h + h + (n-2)(h^2 + h) + h*out + out`.
    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.in_dim, self.hidden_dim, self.out_dim);
        i * h + h + (self.n_layers - 2) * (h * h + h) + h * o + o
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let fan_in = if l == 0 { self.in_dim } else { self.hidden_dim };
                let fan_out = if l + 1 == self.n_layers {
                    self.out_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// A multi-layer perceptron whose weights live in a [`ParamStore`].
/// Weights are stored `fan_in x fan_out` so a batch is `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Mlp {
    /// Registers freshly initialized layers under `name`.
    ///
    /// ReLU nets use fan-in scaled uniform weights and zero biases. Periodic nets use
    /// the sine-network scheme: first layer `U(-1/in, 1/in)`, later layers
    /// `U(-sqrt(6/h)/omega0, sqrt(6/h)/omega0)`.
    pub fn new<R: Rng>(spec: MlpSpec, name: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let last = spec.n_layers - 1;
        for (l, (fi, fo)) in spec.dims().into_iter().enumerate() {
            let bound = match spec.activation {
                Activation::Relu if l == last => math::sqrt(3.0 / fi as f64),
                Activation::Relu => math::sqrt(6.0 / fi as f64),
                Activation::Periodic { .. } if l == 0 => 1.0 / fi as f64,
                Activation::Periodic { omega0 } => math::sqrt(6.0 / fi as f64) / omega0,
            };
            let w = (0..fi * fo).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let b = match spec.activation {
                Activation::Relu => vec![0.0; fo],
                Activation::Periodic { .. } => {
                    let bb = 1.0 / math::sqrt(fi as f64);
                    (0..fo).map(|_| bb * (2.0 * rng.random::<f64>() - 1.0)).collect()
                }
            };
            weights.push(store.add(&format!("{name}.w{l}"), Tensor { rows: fi, cols: fo, data: w }));
            biases.push(store.add(&format!("{name}.b{l}"), Tensor { rows: 1, cols: fo, data: b }));
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    fn hidden_act(&self) -> Act {
        match self.spec.activation {
            Activation::Relu => Act::Relu,
            Activation::Periodic { omega0 } => Act::Sin(omega0),
        }
    }

    /// Records the forward pass of a `batch x in_dim` input.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x)[1];
        if width != self.spec.in_dim {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {width}",
                self.spec.in_dim
            )));
        }
        let mut h = x;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let w = tape.param(store, self.weights[l]);
            let b = tape.param(store, self.biases[l]);
            let act = if l == last { Act::Identity } else { self.hidden_act() };
            h = tape.linear(h, w, b, act);
        }
        Ok(h)
    }

    /// Forward pass without recording gradients.
    pub fn eval(&self, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }
}

/// Learnable `n_rows x 2` latent vectors, initialized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub n_rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub const DIM: usize = 2;

    pub fn new(n_rows: usize, name: &str, store: &mut ParamStore) -> Self {
        let id = store.add_embedding(name, Tensor::filled(n_rows, Self::DIM, 1.0));
        EmbeddingTable {
            id,
            n_rows,
            dim: Self::DIM,
        }
    }

    pub fn row<'a>(&self, store: &'a ParamStore, i: usize) -> &'a [f64] {
        store.get(self.id).row(i)
    }
}
