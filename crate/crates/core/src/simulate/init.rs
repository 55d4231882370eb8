//! Initial-state recipes. The gravity and boids recipes are our own choices; only
//! the morphology they produce (orbiting disk, flock) is meant to match.

use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{SystemConfig, SystemKind};
use super::environment::Environment;
use super::latents::LatentParams;
use crate::dyncore::{Frame, Vec2};
use crate::math;
use crate::prelude::*;

fn uniform_box<R: Rng>(n: usize, l: f64, rng: &mut R) -> Vec<Vec2> {
    (0..n)
        .map(|_| Vec2::new(rng.random::<f64>() * l, rng.random::<f64>() * l))
        .collect()
}

fn random_directions<R: Rng>(n: usize, speed: f64, rng: &mut R) -> Vec<Vec2> {
    (0..n)
        .map(|_| {
            let th = 2.0 * PI * rng.random::<f64>();
            Vec2::new(math::cos(th), math::sin(th)) * speed
        })
        .collect()
}

/// Disk of radius `0.4 * box` around the box center with tangential velocities
/// `speed * sqrt(M(<r) / r)`, i.e. roughly circular orbits around the enclosed mass.
fn gravity_disk<R: Rng>(cfg: &SystemConfig, lat: &LatentParams, rng: &mut R) -> (Vec<Vec2>, Vec<Vec2>) {
    let n = cfg.n;
    let radius = cfg.init.amplitude.unwrap_or(0.4) * cfg.box_size;
    let speed = cfg.init.speed.unwrap_or(1.0);
    let center = Vec2::new(0.5, 0.5) * cfg.box_size;
    let offsets: Vec<Vec2> = (0..n)
        .map(|_| {
            let r = radius * math::sqrt(rng.random::<f64>());
            let th = 2.0 * PI * rng.random::<f64>();
            Vec2::new(r * math::cos(th), r * math::sin(th))
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| offsets[a].norm().total_cmp(&offsets[b].norm()));
    let mut vel = vec![Vec2::ZERO; n];
    let mut enclosed = 0.0;
    for &i in &order {
        let r = offsets[i].norm();
        if r > 0.0 {
            let v = speed * math::sqrt(enclosed / r);
            vel[i] = Vec2::new(-offsets[i].y, offsets[i].x) * (v / r);
        }
        enclosed += lat.row(i)[0];
    }
    (offsets.into_iter().map(|o| center + o).collect(), vel)
}

fn gaussian_bumps<R: Rng>(env: &Environment, amplitude: f64, rng: &mut R) -> Vec<f64> {
    let mesh = env.mesh.as_ref().expect("mesh system");
    let bumps: Vec<(Vec2, f64)> = (0..4)
        .map(|_| {
            let c = Vec2::new(0.2 + 0.6 * rng.random::<f64>(), 0.2 + 0.6 * rng.random::<f64>());
            let s: f64 = StandardNormal.sample(rng);
            (c, s)
        })
        .collect();
    let width = 0.06;
    mesh.positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if mesh.boundary[i] {
                return 0.0;
            }
            bumps
                .iter()
                .map(|&(c, s)| amplitude * s * math::exp(-(p - c).norm_sq() / (2.0 * width * width)))
                .sum()
        })
        .collect()
}

/// Draws the initial frame for `cfg`.
pub fn initial_frame<R: Rng>(
    cfg: &SystemConfig,
    env: &Environment,
    lat: &LatentParams,
    rng: &mut R,
) -> Frame {
    let n = cfg.n;
    let l = cfg.box_size;
    match cfg.kind {
        SystemKind::AttractionRepulsion | SystemKind::Coulomb | SystemKind::Boids => {
            let pos = uniform_box(n, l, rng);
            let default_speed = if cfg.kind == SystemKind::Boids { 1e-3 } else { 0.0 };
            let speed = cfg.init.speed.unwrap_or(default_speed);
            let vel = if speed > 0.0 {
                random_directions(n, speed, rng)
            } else {
                vec![Vec2::ZERO; n]
            };
            Frame::new(pos, vel, vec![], 0)
        }
        SystemKind::Gravity => {
            let (pos, vel) = gravity_disk(cfg, lat, rng);
            Frame::new(pos, vel, vec![], 0)
        }
        SystemKind::Wave => {
            let u = gaussian_bumps(env, cfg.init.amplitude.unwrap_or(1.0), rng);
            let mesh = env.mesh.as_ref().expect("mesh system");
            let field = u.iter().flat_map(|&u| [u, 0.0]).collect();
            Frame::new(mesh.positions.clone(), vec![Vec2::ZERO; n], field, 2)
        }
        SystemKind::Rps => {
            let mesh = env.mesh.as_ref().expect("mesh system");
            let amp = cfg.init.amplitude.unwrap_or(1.0);
            let field = (0..3 * n).map(|_| amp * rng.random::<f64>()).collect();
            Frame::new(mesh.positions.clone(), vec![Vec2::ZERO; n], field, 3)
        }
        SystemKind::Signaling => {
            let amp = cfg.init.amplitude.unwrap_or(1.0);
            let field = (0..n).map(|_| amp * (2.0 * rng.random::<f64>() - 1.0)).collect();
            Frame::new(vec![Vec2::ZERO; n], vec![Vec2::ZERO; n], field, 1)
        }
    }
}
