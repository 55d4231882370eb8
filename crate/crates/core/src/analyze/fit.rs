use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cluster::ClusterResult;
use super::profiles::{linspace, InteractionProfile};
use crate::dyncore::Vec2;
use crate::gnn::{EdgeQuery, InteractionModel};
use crate::math;
use crate::prelude::*;
use crate::simulate::{rng_for, SystemKind};
use crate::{Error, Result};

/// Functional family a fit was made in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    PowerLaw,
    LinearInLaplacian,
    BoidsThreeTerm,
    RpsPolynomial,
    SignalingSymbolic,
}

/// Recovered coefficients and how well they track the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: FitFamily,
    pub coefficients: Vec<f64>,
    /// Least-squares slope and R² of recovered against true values (outliers removed).
    pub slope: f64,
    pub r2: f64,
    pub outliers: Vec<bool>,
}

/// `y ~ slope * x + intercept` with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len().min(y.len());
    if n == 0 {
        return LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r2: f64::NAN,
        };
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..n).map(|k| (y[k] - slope * x[k] - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else if ss_res == 0.0 { 1.0 } else { f64::NAN };
    LinearFit { slope, intercept, r2 }
}

/// Flags points whose residual from the initial line exceeds 5 median absolute
/// deviations, then refits without them.
pub fn robust_linear_fit(x: &[f64], y: &[f64]) -> (LinearFit, Vec<bool>) {
    let first = linear_fit(x, y);
    let res: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| b - first.slope * a - first.intercept).collect();
    let outliers = mad_outliers(&res);
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .zip(&outliers)
        .filter(|(_, &o)| !o)
        .map(|((&a, &b), _)| (a, b))
        .unzip();
    (linear_fit(&xs, &ys), outliers)
}

/// `|r - median(r)| > 5 MAD`. With a zero MAD nothing is flagged.
pub fn mad_outliers(residuals: &[f64]) -> Vec<bool> {
    let mut r = residuals.to_vec();
    let med = math::median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|v| (v - med).abs()).collect();
    let mad = math::median(&mut dev);
    residuals
        .iter()
        .map(|v| mad > 0.0 && (v - med).abs() > 5.0 * mad)
        .collect()
}

/// `|response| ~ scale * d^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub scale: f64,
    /// Sign of the mean response (direction of the force).
    pub sign: f64,
    pub r2: f64,
}

/// Least squares of `ln |response|` on `ln d`; zero responses are skipped.
pub fn fit_power_law(profile: &InteractionProfile) -> PowerLaw {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut total = 0.0;
    for (&d, &r) in profile.grid.iter().zip(&profile.response) {
        total += r;
        if d > 0.0 && r != 0.0 && r.is_finite() {
            lx.push(math::ln(d));
            ly.push(math::ln(r.abs()));
        }
    }
    let fit = linear_fit(&lx, &ly);
    PowerLaw {
        exponent: fit.slope,
        scale: math::exp(fit.intercept),
        sign: if total < 0.0 { -1.0 } else { 1.0 },
        r2: fit.r2,
    }
}

/// Per-node `(scale, exponent)` from power-law fits of the profiles.
pub fn fit_masses(profiles: &[InteractionProfile]) -> Vec<PowerLaw> {
    profiles.iter().map(fit_power_law).collect()
}

/// Charges from pairwise products `s_ij ~ q_i q_j` (a square matrix, row-major;
/// `NaN` entries are ignored). Minimizes `sum (q_i q_j - s_ij)^2` by gradient
/// descent from a spectral start; the first charge is made positive.
pub fn recover_charges(products: &[f64], k: usize) -> Result<Vec<f64>> {
    if products.len() != k * k {
        return Err(Error::Shape(format!("{} products for {k} charges", products.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let sym = DMatrix::from_fn(k, k, |i, j| {
        let (a, b) = (products[i * k + j], products[j * k + i]);
        match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a,
            (false, true) => b,
            _ => 0.0,
        }
    });
    // Rank-one start: leading eigenpair by magnitude.
    let eig = nalgebra::SymmetricEigen::new(sym);
    let top = (0..k)
        .max_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()))
        .unwrap_or(0);
    let lam = eig.eigenvalues[top];
    let mut q: Vec<f64> = eig
        .eigenvectors
        .column(top)
        .iter()
        .map(|v| v * math::sqrt(lam.abs()))
        .collect();
    let known: Vec<bool> = products.iter().map(|v| v.is_finite()).collect();
    let scale = products.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let lr = 0.05 / scale;
    for _ in 0..20_000 {
        let mut grad = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                if !known[i * k + j] {
                    continue;
                }
                let r = q[i] * q[j] - products[i * k + j];
                grad[i] += 2.0 * r * q[j];
                grad[j] += 2.0 * r * q[i];
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>();
        if gnorm < 1e-30 {
            break;
        }
        for i in 0..k {
            q[i] -= lr * grad[i];
        }
    }
    if q[0] < 0.0 {
        q.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(q)
}

/// Solves weighted least squares `min sum w_k (A_k x - b_k)^2`.
fn weighted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Option<DVector<f64>> {
    let mut aw = a.clone();
    let mut bw = b.clone();
    for (r, &wr) in w.iter().enumerate() {
        let s = math::sqrt(wr);
        aw.row_mut(r).scale_mut(s);
        bw[r] *= s;
    }
    let svd = aw.svd(true, true);
    svd.solve(&bw, 1e-12).ok()
}

/// Iteratively reweighted least squares with Huber weights (`k = 1.345` robust
/// standard deviations).
pub fn huber_regression(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = b.len();
    let mut w = vec![1.0; n];
    let mut x = weighted_lstsq(a, b, &w)?;
    for _ in 0..50 {
        let res: Vec<f64> = (a * &x - b).iter().copied().collect();
        let mut dev: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        let scale = 1.4826 * math::median(&mut dev);
        if scale <= 1e-300 {
            break;
        }
        let k = 1.345 * scale;
        for (wi, r) in w.iter_mut().zip(&res) {
            *wi = if r.abs() <= k { 1.0 } else { k / r.abs() };
        }
        let next = weighted_lstsq(a, b, &w)?;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-12 * (1.0 + x.norm()) {
            break;
        }
    }
    Some(x)
}

/// Per-node boids coefficients `[a, c, s]` from robust regression of `f` on the basis
/// `{dv, dx, -dx/d^2}` over `samples` random edges inside the model's band.
pub fn fit_boids_terms(model: &dyn InteractionModel, samples: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if model.kind() != SystemKind::Boids {
        return Err(Error::config("kind", "boids fits need a boids model"));
    }
    let band = model
        .band()
        .ok_or_else(|| Error::config("band", "particle model without a band"))?;
    let mut rng = rng_for(seed, 7);
    let mut queries = Vec::with_capacity(samples);
    let vmax = 1e-3;
    for _ in 0..samples {
        let d = band.d_min + (band.d_max - band.d_min) * (0.05 + 0.9 * rng.random::<f64>());
        let th = 2.0 * core::f64::consts::PI * rng.random::<f64>();
        let dx = Vec2::new(math::cos(th), math::sin(th)) * d;
        let rv = |rng: &mut rand_chacha::ChaCha8Rng| {
            Vec2::new(vmax * (2.0 * rng.random::<f64>() - 1.0), vmax * (2.0 * rng.random::<f64>() - 1.0))
        };
        let (vi, vj) = (rv(&mut rng), rv(&mut rng));
        queries.push((dx, vi, vj));
    }
    let mut out = Vec::with_capacity(model.n_nodes());
    for a in model.embeddings() {
        let q: Vec<EdgeQuery> = queries
            .iter()
            .map(|&(dx, vel_i, vel_j)| EdgeQuery {
                a_i: a,
                a_j: a,
                dx,
                vel_i,
                vel_j,
            })
            .collect();
        let m = model.messages(&q)?;
        let mut design = DMatrix::zeros(2 * samples, 3);
        let mut rhs = DVector::zeros(2 * samples);
        for (k, (&(dx, vi, vj), f)) in queries.iter().zip(&m).enumerate() {
            let dv = vj - vi;
            let d2 = dx.norm_sq();
            for (c, (dvc, dxc, fc)) in [(dv.x, dx.x, f.x), (dv.y, dx.y, f.y)].into_iter().enumerate() {
                let r = 2 * k + c;
                design[(r, 0)] = dvc;
                design[(r, 1)] = dxc;
                design[(r, 2)] = -dxc / d2;
                rhs[r] = fc;
            }
        }
        // Columns differ by orders of magnitude; normalize before solving.
        let norms: Vec<f64> = (0..3).map(|c| design.column(c).norm().max(1e-300)).collect();
        for (c, &nc) in norms.iter().enumerate() {
            design.column_mut(c).scale_mut(1.0 / nc);
        }
        let x = huber_regression(&design, &rhs)
            .ok_or_else(|| Error::InvalidInput("boids regression failed".into()))?;
        out.push([x[0] / norms[0], x[1] / norms[1], x[2] / norms[2]]);
    }
    Ok(out)
}

/// Per-node slope of the wave update against the Laplacian (state held at 0).
pub fn fit_wave_coeffs(model: &dyn InteractionModel) -> Result<Vec<f64>> {
    if model.kind() != SystemKind::Wave {
        return Err(Error::config("kind", "wave fits need a wave model"));
    }
    let (range, _) = model.probe_ranges();
    let grid = linspace(-range, range, 41);
    let emb = model.embeddings();
    let mut rows = Vec::with_capacity(emb.len() * grid.len());
    for &a in &emb {
        rows.extend(core::iter::repeat_n(a, grid.len()));
    }
    let lap: Vec<f64> = emb.iter().flat_map(|_| grid.iter().copied()).collect();
    let out = model.update(&rows, &vec![0.0; lap.len()], &lap)?;
    Ok((0..emb.len())
        .map(|i| linear_fit(&grid, &out[i * grid.len()..(i + 1) * grid.len()]).slope)
        .collect())
}

/// Names of the 31 reaction-diffusion coefficients reported per cluster.
pub const RPS_TERMS: [&str; 10] = ["1", "u", "v", "w", "uu", "vv", "ww", "uv", "uw", "vw"];

fn rps_basis(s: &[f64]) -> [f64; 10] {
    let (u, v, w) = (s[0], s[1], s[2]);
    [1.0, u, v, w, u * u, v * v, w * w, u * v, u * w, v * w]
}

/// Coefficients of the true reaction term of channel `k` in [`RPS_TERMS`] order.
pub fn rps_true_poly(k: usize, beta: f64) -> [f64; 10] {
    // u_k (1 - u - v - w - beta u_{k+1})
    let mut c = [0.0; 10];
    c[1 + k] = 1.0;
    let sq = |i: usize, j: usize| -> usize {
        let (i, j) = (i.min(j), i.max(j));
        match (i, j) {
            (0, 0) => 4,
            (1, 1) => 5,
            (2, 2) => 6,
            (0, 1) => 7,
            (0, 2) => 8,
            _ => 9,
        }
    };
    for j in 0..3 {
        c[sq(k, j)] -= 1.0;
    }
    c[sq(k, (k + 1) % 3)] -= beta;
    c
}

/// Per-cluster fit of the reaction-diffusion update: for each channel, a Laplacian
/// coefficient plus the ten polynomial terms of [`RPS_TERMS`]. Returns, per cluster,
/// 31 numbers: the mean diffusion coefficient then 3 x 10 polynomial coefficients.
pub fn fit_rps_terms(model: &dyn InteractionModel, clusters: &ClusterResult, samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if model.kind() != SystemKind::Rps {
        return Err(Error::config("kind", "reaction-diffusion fits need an rps model"));
    }
    let (lap_range, state_range) = model.probe_ranges();
    let emb = model.embeddings();
    let mut rng = rng_for(seed, 8);
    let mut out = Vec::with_capacity(clusters.n_clusters);
    for c in 0..clusters.n_clusters {
        let members: Vec<usize> = (0..emb.len()).filter(|&i| clusters.labels[i] == c).collect();
        if members.is_empty() {
            out.push(vec![f64::NAN; 31]);
            continue;
        }
        let mut a_med = [0.0; 2];
        for (dim, m) in a_med.iter_mut().enumerate() {
            let mut v: Vec<f64> = members.iter().map(|&i| emb[i][dim]).collect();
            *m = math::median(&mut v);
        }
        let mut state = Vec::with_capacity(samples * 3);
        let mut lap = Vec::with_capacity(samples * 3);
        for _ in 0..samples {
            for _ in 0..3 {
                state.push(state_range * rng.random::<f64>());
                lap.push(lap_range * (2.0 * rng.random::<f64>() - 1.0));
            }
        }
        let y = model.update(&vec![a_med; samples], &state, &lap)?;
        let mut coeffs = vec![0.0; 31];
        let mut diff = 0.0;
        for k in 0..3 {
            let design = DMatrix::from_fn(samples, 11, |r, col| {
                if col == 0 {
                    lap[r * 3 + k]
                } else {
                    rps_basis(&state[r * 3..r * 3 + 3])[col - 1]
                }
            });
            let rhs = DVector::from_fn(samples, |r, _| y[r * 3 + k]);
            let x = weighted_lstsq(&design, &rhs, &vec![1.0; samples])
                .ok_or_else(|| Error::InvalidInput("rps regression failed".into()))?;
            diff += x[0] / 3.0;
            for t in 0..10 {
                coeffs[1 + k * 10 + t] = x[1 + t];
            }
        }
        coeffs[0] = diff;
        out.push(coeffs);
    }
    Ok(out)
}

/// Recovered signaling structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingFit {
    /// Per node `(b, c)` from `Phi(a_i, u) ~ -b u + c tanh(u)`.
    pub node_coeffs: Vec<[f64; 2]>,
    /// Node types from thresholding the coefficients.
    pub labels: Vec<usize>,
    /// `f(u) ~ k tanh(u)`.
    pub f_scale: f64,
    /// Learned weights times `f_scale`, per directed edge of the model.
    pub weights: Vec<f64>,
}

/// Fits the update functions and the shared message of a signaling model and
/// rescales its connectivity by the fitted message scale.
pub fn fit_signaling(model: &dyn InteractionModel) -> Result<SignalingFit> {
    if model.kind() != SystemKind::Signaling {
        return Err(Error::config("kind", "signaling fits need a signaling model"));
    }
    let (_, range) = model.probe_ranges();
    let grid = linspace(-range, range, 41);
    let tanh: Vec<f64> = grid.iter().map(|&u| math::tanh(u)).collect();
    let f = model.signal(&grid)?;
    let f_scale = {
        let num: f64 = f.iter().zip(&tanh).map(|(a, b)| a * b).sum();
        let den: f64 = tanh.iter().map(|b| b * b).sum();
        num / den
    };
    let emb = model.embeddings();
    let mut rows = Vec::with_capacity(emb.len() * grid.len());
    for &a in &emb {
        rows.extend(core::iter::repeat_n(a, grid.len()));
    }
    let state: Vec<f64> = emb.iter().flat_map(|_| grid.iter().copied()).collect();
    let out = model.update(&rows, &state, &[])?;
    let design = DMatrix::from_fn(grid.len(), 2, |r, c| if c == 0 { -grid[r] } else { tanh[r] });
    let mut node_coeffs = Vec::with_capacity(emb.len());
    for i in 0..emb.len() {
        let rhs = DVector::from_column_slice(&out[i * grid.len()..(i + 1) * grid.len()]);
        let x = weighted_lstsq(&design, &rhs, &vec![1.0; grid.len()])
            .ok_or_else(|| Error::InvalidInput("signaling regression failed".into()))?;
        node_coeffs.push([x[0], x[1]]);
    }
    let labels = split_two_types(&node_coeffs.iter().map(|c| c[1]).collect::<Vec<_>>());
    let weights = model.connectivity().iter().map(|(_, w)| w * f_scale).collect();
    Ok(SignalingFit {
        node_coeffs,
        labels,
        f_scale,
        weights,
    })
}

/// Two groups split at the largest gap of the sorted values.
pub fn split_two_types(values: &[f64]) -> Vec<usize> {
    if values.len() < 2 {
        return vec![0; values.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut gap, mut cut) = (f64::NEG_INFINITY, sorted[0]);
    for w in sorted.windows(2) {
        if w[1] - w[0] > gap {
            gap = w[1] - w[0];
            cut = 0.5 * (w[0] + w[1]);
        }
    }
    values.iter().map(|&v| usize::from(v > cut)).collect()
}

/// Recovered-vs-true scatter summary with the 5 MAD outlier rule.
pub fn compare(family: FitFamily, recovered: &[f64], truth: &[f64]) -> FitResult {
    let (fit, outliers) = robust_linear_fit(truth, recovered);
    FitResult {
        family,
        coefficients: recovered.to_vec(),
        slope: fit.slope,
        r2: fit.r2,
        outliers,
    }
}

/// Candidate closed forms for a 1-D profile `y(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileForm {
    /// `c x^p`
    PowerLaw,
    /// `c0 + c1 x`
    Linear,
    /// `c0 x + c1 tanh(x)`
    LinearTanh,
    /// `c0 + c1 x + c2 x^2`
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormScore {
    pub form: ProfileForm,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub bic: f64,
}

fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let nf = n as f64;
    // Floor keeps exact fits comparable instead of all reaching minus infinity.
    nf * math::ln((rss / nf).max(1e-300)) + k as f64 * math::ln(nf)
}

fn lstsq_form(x: &[f64], y: &[f64], basis: impl Fn(f64) -> Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let k = basis(0.0).len();
    let design = DMatrix::from_fn(x.len(), k, |r, c| basis(x[r])[c]);
    let rhs = DVector::from_column_slice(y);
    let c = weighted_lstsq(&design, &rhs, &vec![1.0; x.len()])?;
    let rss = (&design * &c - &rhs).norm_squared();
    Some((c.iter().copied().collect(), rss))
}

/// Fits every candidate form to a profile and scores it by BIC (residuals in
/// response units); best first. The power law is only tried on positive grids.
pub fn select_form(profile: &InteractionProfile) -> Vec<FormScore> {
    let (x, y) = (&profile.grid, &profile.response);
    let n = x.len();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    if x.iter().all(|&v| v > 0.0) {
        let p = fit_power_law(profile);
        if p.exponent.is_finite() {
            let c = p.sign * p.scale;
            let rss: f64 = x.iter().zip(y).map(|(&a, &b)| (b - c * math::pow(a, p.exponent)).powi(2)).sum();
            out.push(FormScore {
                form: ProfileForm::PowerLaw,
                coefficients: vec![c, p.exponent],
                rss,
                bic: bic(rss, n, 2),
            });
        }
    }
    let forms: [(ProfileForm, &dyn Fn(f64) -> Vec<f64>); 3] = [
        (ProfileForm::Linear, &|v| vec![1.0, v]),
        (ProfileForm::LinearTanh, &|v| vec![v, math::tanh(v)]),
        (ProfileForm::Quadratic, &|v| vec![1.0, v, v * v]),
    ];
    for (form, basis) in forms {
        if let Some((coefficients, rss)) = lstsq_form(x, y, basis) {
            let k = coefficients.len();
            out.push(FormScore {
                form,
                coefficients,
                rss,
                bic: bic(rss, n, k),
            });
        }
    }
    out.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    out
}
