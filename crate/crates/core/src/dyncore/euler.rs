use super::{Frame, Vec2};
use crate::math;
use crate::prelude::*;

/// A time derivative produced by a simulator or a learned model.
#[derive(Debug, Clone, PartialEq)]
pub enum Derivative {
    /// First order in position: the velocity to apply.
    Velocity(Vec<Vec2>),
    /// Second order in position.
    Acceleration(Vec<Vec2>),
    /// First order in the field, one value per field channel.
    FieldRate(Vec<f64>),
    /// Second order in the field. For a frame of arity `2k`, one value per node and
    /// value channel (`k` per node); the rates live in the upper half of the field.
    FieldAcceleration(Vec<f64>),
}

impl Derivative {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Derivative::Velocity(v) | Derivative::Acceleration(v) => {
                v.iter().flat_map(|p| [p.x, p.y]).collect()
            }
            Derivative::FieldRate(v) | Derivative::FieldAcceleration(v) => v.clone(),
        }
    }

    /// Number of values per node.
    pub fn width(&self, n: usize) -> usize {
        match self {
            Derivative::Velocity(_) | Derivative::Acceleration(_) => 2,
            Derivative::FieldRate(v) | Derivative::FieldAcceleration(v) => {
                if n == 0 {
                    0
                } else {
                    v.len() / n
                }
            }
        }
    }
}

/// Semi-implicit Euler step; rates are updated first and the new rate moves the state.
/// Positions are wrapped into `[0, box)` when `wrap` is set.
pub fn euler_step(frame: &Frame, deriv: &Derivative, dt: f64, wrap: Option<f64>) -> Frame {
    let mut next = frame.clone();
    euler_step_in_place(&mut next, deriv, dt, wrap);
    next
}

pub fn euler_step_in_place(frame: &mut Frame, deriv: &Derivative, dt: f64, wrap: Option<f64>) {
    match deriv {
        Derivative::Velocity(v) => {
            for (i, &vi) in v.iter().enumerate() {
                frame.vel[i] = vi;
                frame.pos[i] += vi * dt;
            }
        }
        Derivative::Acceleration(a) => {
            for (i, &ai) in a.iter().enumerate() {
                frame.vel[i] += ai * dt;
                let v = frame.vel[i];
                frame.pos[i] += v * dt;
            }
        }
        Derivative::FieldRate(r) => {
            debug_assert_eq!(r.len(), frame.field.len());
            for (u, &du) in frame.field.iter_mut().zip(r) {
                *u += dt * du;
            }
        }
        Derivative::FieldAcceleration(acc) => {
            let k = frame.arity / 2;
            for i in 0..frame.len() {
                for c in 0..k {
                    let base = i * frame.arity;
                    frame.field[base + k + c] += dt * acc[i * k + c];
                    frame.field[base + c] += dt * frame.field[base + k + c];
                }
            }
        }
    }
    if let Some(l) = wrap {
        if matches!(deriv, Derivative::Velocity(_) | Derivative::Acceleration(_)) {
            for p in frame.pos.iter_mut() {
                p.x = math::wrap(p.x, l);
                p.y = math::wrap(p.y, l);
            }
        }
    }
}
