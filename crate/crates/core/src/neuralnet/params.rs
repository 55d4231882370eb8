use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::math;
use crate::prelude::*;

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// How gradients that several gathers scattered into one embedding row are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    Sum,
    #[default]
    Mean,
}

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Tensor,
    /// Embedding tables take part in per-row gradient averaging.
    pub embedding: bool,
    /// How often each row was gathered since the last `zero_grad` (embeddings only).
    #[serde(skip)]
    pub row_hits: Vec<f64>,
}

/// Owns every learnable tensor of a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, false)
    }

    pub fn add_embedding(&mut self, name: &str, value: Tensor) -> ParamId {
        self.push(name, value, true)
    }

    fn push(&mut self, name: &str, value: Tensor, embedding: bool) -> ParamId {
        let grad = Tensor::zeros(value.rows, value.cols);
        let row_hits = if embedding { vec![0.0; value.rows] } else { Vec::new() };
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            embedding,
            row_hits,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if p.grad.len() != p.value.len() {
                p.grad = Tensor::zeros(p.value.rows, p.value.cols);
            } else {
                p.grad.data.fill(0.0);
            }
            if p.embedding {
                p.row_hits.clear();
                p.row_hits.resize(p.value.rows, 0.0);
            }
        }
    }

    /// All values concatenated in parameter order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.data.iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flat_values`].
    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut k = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data.copy_from_slice(&values[k..k + n]);
            k += n;
        }
    }
}

/// Adam state; moments are laid out like [`ParamStore::flat_values`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mode: GradMode,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, mode: GradMode) -> Self {
        let n = store.count();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mode,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::pow(self.beta1, t);
        let bc2 = 1.0 - math::pow(self.beta2, t);
        let mut k = 0;
        for p in &mut store.params {
            let cols = p.value.cols.max(1);
            for (idx, (x, &g0)) in p.value.data.iter_mut().zip(&p.grad.data).enumerate() {
                let mut g = g0;
                if p.embedding && self.mode == GradMode::Mean {
                    let hits = p.row_hits.get(idx / cols).copied().unwrap_or(0.0);
                    if hits > 1.0 {
                        g /= hits;
                    }
                }
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *x -= self.lr * mh / (math::sqrt(vh) + self.eps);
                k += 1;
            }
        }
    }
}
