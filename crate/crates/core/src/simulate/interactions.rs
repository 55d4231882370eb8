//! Pairwise interaction rules. `dx` is always `x_j - x_i` (sender minus receiver)
//! and `d = |dx|`.

use crate::dyncore::Vec2;
use crate::math;

/// `g(x, y) = exp(-x^(2y) / (2 sigma^2))`.
#[inline]
pub fn kernel(x: f64, y: f64, sigma: f64) -> f64 {
    math::exp(-math::pow(x, 2.0 * y) / (2.0 * sigma * sigma))
}

/// Signed radial magnitude `a g(d, b) - c g(d, d')` of the attraction-repulsion rule.
#[inline]
pub fn attraction_repulsion_scalar(params: &[f64], d: f64, sigma: f64) -> f64 {
    let (a, b, c, dd) = (params[0], params[1], params[2], params[3]);
    a * kernel(d, b, sigma) - c * kernel(d, dd, sigma)
}

/// Attraction-repulsion velocity contribution: the scalar rule along `dx / d`.
#[inline]
pub fn interaction_attraction_repulsion(params: &[f64], d: f64, dx: Vec2, sigma: f64) -> Vec2 {
    dx * (attraction_repulsion_scalar(params, d, sigma) / d)
}

/// `m_j dx / d^3`.
#[inline]
pub fn interaction_gravity(m_j: f64, dx: Vec2, d: f64) -> Vec2 {
    dx * (m_j / (d * d * d))
}

/// `-q_i q_j dx / d^3`: like charges repel.
#[inline]
pub fn interaction_coulomb(q_i: f64, q_j: f64, dx: Vec2, d: f64) -> Vec2 {
    dx * (-q_i * q_j / (d * d * d))
}

/// Cohesion `c dx`, alignment `a dv` and separation `-s dx / d^2`, with
/// `params = [a, c, s]` and `dv = v_j - v_i`.
#[inline]
pub fn interaction_boids(params: &[f64], dx: Vec2, dv: Vec2, d: f64) -> Vec2 {
    let (a, c, s) = (params[0], params[1], params[2]);
    dx * c + dv * a - dx * (s / (d * d))
}
