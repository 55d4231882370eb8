use serde::{Deserialize, Serialize};

use super::{Neighborhood, Vec2};
use crate::prelude::*;

/// Owned state of a single node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub field: Vec<f64>,
}

/// All node states at one time step, stored structure-of-arrays.
///
/// `field` holds `arity` values per node. Second-order field systems store the
/// values first and their rates after them, so a wave node carries `[u, du/dt]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub pos: Vec<Vec2>,
    pub vel: Vec<Vec2>,
    pub field: Vec<f64>,
    pub arity: usize,
}

impl Frame {
    pub fn new(pos: Vec<Vec2>, vel: Vec<Vec2>, field: Vec<f64>, arity: usize) -> Self {
        debug_assert_eq!(pos.len(), vel.len());
        debug_assert_eq!(field.len(), pos.len() * arity);
        Frame {
            pos,
            vel,
            field,
            arity,
        }
    }

    /// A frame of `n` nodes at the origin with zeroed state.
    pub fn zeros(n: usize, arity: usize) -> Self {
        Frame::new(vec![Vec2::ZERO; n], vec![Vec2::ZERO; n], vec![0.0; n * arity], arity)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn field_of(&self, i: usize) -> &[f64] {
        &self.field[i * self.arity..(i + 1) * self.arity]
    }

    pub fn node(&self, i: usize) -> NodeState {
        NodeState {
            pos: self.pos[i],
            vel: self.vel[i],
            field: self.field_of(i).to_vec(),
        }
    }

    pub fn from_nodes(nodes: &[NodeState]) -> Self {
        let arity = nodes.first().map_or(0, |n| n.field.len());
        let mut frame = Frame::zeros(nodes.len(), arity);
        for (i, n) in nodes.iter().enumerate() {
            frame.pos[i] = n.pos;
            frame.vel[i] = n.vel;
            frame.field[i * arity..(i + 1) * arity].copy_from_slice(&n.field);
        }
        frame
    }

    /// Index of the first non-finite node, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.len()).find(|&i| {
            !self.pos[i].is_finite()
                || !self.vel[i].is_finite()
                || self.field_of(i).iter().any(|v| !v.is_finite())
        })
    }

    /// Keeps only the listed nodes, in the given order.
    pub fn select(&self, nodes: &[usize]) -> Frame {
        let mut out = Frame::zeros(nodes.len(), self.arity);
        for (k, &i) in nodes.iter().enumerate() {
            out.pos[k] = self.pos[i];
            out.vel[k] = self.vel[i];
            out.field[k * self.arity..(k + 1) * self.arity].copy_from_slice(self.field_of(i));
        }
        out
    }
}

/// Role flags attached to each node of a [`GraphSnapshot`].
///
/// A node that is neither observable nor a ghost is a stationary hidden-field node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeFlags {
    pub observable: bool,
    pub ghost: bool,
    pub boundary: bool,
}

impl NodeFlags {
    pub const OBSERVED: NodeFlags = NodeFlags {
        observable: true,
        ghost: false,
        boundary: false,
    };

    pub fn is_field(&self) -> bool {
        !self.observable && !self.ghost
    }

    /// Whether the node contributes a term to the training loss.
    pub fn in_loss(&self) -> bool {
        self.observable && !self.ghost && !self.boundary
    }
}

/// Node states plus connectivity for one time step: the unit consumed by message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub t: usize,
    pub frame: Frame,
    pub edges: Neighborhood,
    pub flags: Vec<NodeFlags>,
}

impl GraphSnapshot {
    pub fn loss_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| f.in_loss())
            .map(|(i, _)| i)
    }
}
