use serde::{Deserialize, Serialize};

use crate::dyncore::{Frame, Vec2};
use crate::math;
use crate::prelude::*;
use crate::{Error, Result};

fn offset(a: Vec2, b: Vec2, periodic: Option<f64>) -> Vec2 {
    let d = b - a;
    match periodic {
        Some(l) => Vec2::new(math::min_image(d.x, l), math::min_image(d.y, l)),
        None => d,
    }
}

/// Root-mean-square position error over all nodes and the common frames, the
/// distance taken by minimum image when `periodic` is set.
pub fn rollout_rmse(truth: &[Frame], rollout: &[Frame], periodic: Option<f64>) -> Result<f64> {
    let t = truth.len().min(rollout.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in truth[..t].iter().zip(&rollout[..t]) {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("frames hold {} and {} nodes", a.len(), b.len())));
        }
        for (&p, &q) in a.pos.iter().zip(&b.pos) {
            sum += offset(p, q, periodic).norm_sq();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { math::sqrt(sum / count as f64) })
}

/// Root-mean-square difference of two scalar fields.
pub fn field_rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Entropic regularization in squared world units.
    pub eps: f64,
    pub max_iter: usize,
    /// Stop once no dual potential moves by more than `tol * eps` in a sweep.
    pub tol: f64,
    pub periodic: Option<f64>,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            eps: 1e-3,
            max_iter: 200,
            tol: 1e-9,
            periodic: None,
        }
    }
}

fn logsumexp(vals: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals);
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + math::ln(buf.iter().map(|v| math::exp(v - m)).sum::<f64>())
}

const ANNEAL_SWEEPS: usize = 200;
const ANNEAL_TOL: f64 = 1e-4;
const ANNEAL_FACTOR: f64 = 0.5;

fn cost_matrix(x: &[Vec2], y: &[Vec2], periodic: Option<f64>) -> Vec<f64> {
    x.iter()
        .flat_map(|&p| y.iter().map(move |&q| offset(p, q, periodic).norm_sq()))
        .collect()
}

/// Regularization schedule: from the largest cost shrinking down to `eps`.
fn schedule(cost: &[f64], eps: f64) -> Vec<f64> {
    let mut e = cost.iter().copied().fold(0.0, f64::max).max(eps);
    let mut out = Vec::new();
    while e > eps {
        out.push(e);
        e = (e * ANNEAL_FACTOR).max(eps);
    }
    out
}

/// Entropic OT cost between uniform clouds, `<a, f> + <b, g>` at the dual optimum.
///
/// Log-domain Sinkhorn with simultaneous, averaged updates of both potentials, so
/// the result is symmetric in its arguments and `x == y` runs the symmetric fixed
/// point. The regularization is annealed from the largest cost down to `eps`.
fn entropic_ot(x: &[Vec2], y: &[Vec2], opts: &SinkhornOptions) -> f64 {
    let (n, m) = (x.len(), y.len());
    let cost = cost_matrix(x, y, opts.periodic);
    let la = -math::ln(n as f64);
    let lb = -math::ln(m as f64);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = Vec::with_capacity(n.max(m));
    // Returns the largest potential change in units of `eps`.
    let step = |eps: f64, f: &mut [f64], g: &mut [f64], buf: &mut Vec<f64>| -> f64 {
        let nf: Vec<f64> = (0..n)
            .map(|i| -eps * logsumexp((0..m).map(|j| lb + (g[j] - cost[i * m + j]) / eps), buf))
            .collect();
        let ng: Vec<f64> = (0..m)
            .map(|j| -eps * logsumexp((0..n).map(|i| la + (f[i] - cost[i * m + j]) / eps), buf))
            .collect();
        let mut change = 0.0f64;
        for (p, t) in f.iter_mut().zip(nf).chain(g.iter_mut().zip(ng)) {
            let v = 0.5 * (*p + t);
            change = change.max((v - *p).abs() / eps);
            *p = v;
        }
        change
    };
    for e in schedule(&cost, opts.eps) {
        for _ in 0..ANNEAL_SWEEPS {
            if step(e, &mut f, &mut g, &mut buf) <= ANNEAL_TOL {
                break;
            }
        }
    }
    for _ in 0..opts.max_iter.max(1) {
        if step(opts.eps, &mut f, &mut g, &mut buf) <= opts.tol {
            break;
        }
    }
    f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64
}

/// Debiased Sinkhorn divergence `OT(a,b) - OT(a,a)/2 - OT(b,b)/2` between
/// uniform-weight point clouds.
pub fn sinkhorn_divergence(a: &[Vec2], b: &[Vec2], opts: &SinkhornOptions) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("sinkhorn divergence needs non-empty clouds".into()));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::config("eps", "entropic regularization must be positive"));
    }
    let ab = entropic_ot(a, b, opts);
    let aa = entropic_ot(a, a, opts);
    let bb = entropic_ot(b, b, opts);
    Ok(ab - 0.5 * (aa + bb))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|k| {
            let x = k as f64 - r;
            math::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = w1.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &w1 {
        for b in &w1 {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean structural similarity of two `side x side` row-major fields over all
/// fully contained 11x11 Gaussian windows (sigma 1.5), with `K1 = 0.01`,
/// `K2 = 0.03` and dynamic range `range` (default: the joint range of both fields).
pub fn ssim(a: &[f64], b: &[f64], side: usize, range: Option<f64>) -> Result<f64> {
    if a.len() != side * side || b.len() != side * side {
        return Err(Error::Shape(format!("ssim needs two {side}x{side} fields")));
    }
    if side < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("ssim needs fields of side >= {SSIM_WINDOW}")));
    }
    let l = range.unwrap_or_else(|| {
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    });
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let w = gaussian_window();
    let span = side - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for r0 in 0..span {
        for c0 in 0..span {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let k = (r0 + dr) * side + c0 + dc;
                    let wk = w[dr * SSIM_WINDOW + dc];
                    ma += wk * a[k];
                    mb += wk * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let k = (r0 + dr) * side + c0 + dc;
                    let wk = w[dr * SSIM_WINDOW + dc];
                    va += wk * (a[k] - ma) * (a[k] - ma);
                    vb += wk * (b[k] - mb) * (b[k] - mb);
                    cov += wk * (a[k] - ma) * (b[k] - mb);
                }
            }
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += if den > 0.0 { num / den } else { 1.0 };
        }
    }
    Ok(total / (span * span) as f64)
}

/// Pearson correlation; `None` when either input is constant or lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}
