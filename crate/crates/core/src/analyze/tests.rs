use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::dyncore::Vec2;
use crate::gnn::{InteractionModel, TruthModel};
use crate::prelude::*;
use crate::simulate::{
    attraction_repulsion_scalar, setup, simulate, simulate_from, LatentSpec, SystemConfig, SystemKind,
};

fn types(params: &[&[f64]]) -> LatentSpec {
    LatentSpec::Types {
        params: params.iter().map(|p| p.to_vec()).collect(),
    }
}

fn stub(cfg: &SystemConfig) -> TruthModel {
    let (lat, env, _) = setup(cfg).unwrap();
    TruthModel::new(env, lat)
}

fn truth_clusters(type_id: &[usize]) -> ClusterResult {
    ClusterResult {
        labels: type_id.to_vec(),
        n_clusters: type_id.iter().max().map_or(0, |m| m + 1),
        accuracy: None,
        outliers: 0,
    }
}

/// Naive single linkage: repeatedly merge the two closest clusters while their
/// minimum pairwise distance is within the threshold.
fn naive_single_linkage(points: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    loop {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        let d = dist(&points[i], &points[j]);
                        if d < best.0 {
                            best = (d, a, b);
                        }
                    }
                }
            }
        }
        if best.0 > threshold {
            break;
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    let mut labels = vec![0; points.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = c;
        }
    }
    labels
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn single_linkage_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for threshold in [0.05, 0.1, 0.2] {
        let points: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let fast = hier_cluster(&points, threshold);
        let slow = naive_single_linkage(&points, threshold);
        assert!(same_partition(&fast.labels, &slow));
        assert_eq!(fast.n_clusters, slow.iter().max().unwrap() + 1);
    }
}

#[test]
fn separated_blobs_form_three_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..30 {
            points.push([c[0] + 1e-3 * rng.random::<f64>(), c[1] + 1e-3 * rng.random::<f64>()]);
            truth.push(k);
        }
    }
    let r = cluster_points(&points, CLUSTER_THRESHOLD).with_truth(&truth);
    assert_eq!(r.n_clusters, 3);
    assert_eq!(r.accuracy, Some(1.0));
    let same = cluster_points(&vec![[0.3, 0.3]; 10], CLUSTER_THRESHOLD);
    assert_eq!(same.n_clusters, 1);
    assert_eq!(hier_cluster(&[vec![1.0]], 0.01).n_clusters, 1);
}

#[test]
fn ninety_ten_confusion_scores_point_nine() {
    // Class k: 9 correct nodes with label k, 1 node with label k+1.
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for k in 0..3 {
        for _ in 0..9 {
            labels.push(k);
            truth.push(k);
        }
        labels.push((k + 1) % 3);
        truth.push(k);
    }
    // Oracle: best of all six label matchings.
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .map(|p| labels.iter().zip(&truth).filter(|(&l, &t)| p[l] == t).count())
        .max()
        .unwrap() as f64
        / labels.len() as f64;
    assert_eq!(best, 0.9);
    assert!((classification_accuracy(&labels, &truth) - 0.9).abs() < 1e-15);
}

proptest! {
    #[test]
    fn accuracy_ignores_label_names(labels in proptest::collection::vec(0usize..4, 1..60), shift in 1usize..4) {
        let truth: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| if i % 5 == 0 { (l + 1) % 4 } else { l }).collect();
        let renamed: Vec<usize> = labels.iter().map(|&l| (l + shift) % 4).collect();
        let a = classification_accuracy(&labels, &truth);
        prop_assert!((a - classification_accuracy(&renamed, &truth)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(classification_accuracy(&renamed, &labels), 1.0);
    }

    #[test]
    fn hungarian_finds_the_brute_force_optimum(cost in proptest::collection::vec(0.0f64..10.0, 16)) {
        let m: Vec<Vec<f64>> = cost.chunks(4).map(|r| r.to_vec()).collect();
        let assign = hungarian(&m);
        let got: f64 = assign.iter().enumerate().map(|(i, &j)| m[i][j]).sum();
        let mut best = f64::INFINITY;
        for a in 0..4 { for b in 0..4 { for c in 0..4 { for d in 0..4 {
            let p = [a, b, c, d];
            if (0..4).all(|k| p.iter().filter(|&&x| x == k).count() == 1) {
                best = best.min((0..4).map(|i| m[i][p[i]]).sum());
            }
        }}}}
        prop_assert!((got - best).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_is_symmetric_and_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec2> = (0..12).map(|_| Vec2::new(rng.random(), rng.random())).collect();
        let b: Vec<Vec2> = (0..9).map(|_| Vec2::new(rng.random(), rng.random())).collect();
        let opts = SinkhornOptions { eps: 1e-2, ..SinkhornOptions::default() };
        let ab = sinkhorn_divergence(&a, &b, &opts).unwrap();
        let ba = sinkhorn_divergence(&b, &a, &opts).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab >= -1e-9);
        prop_assert!(sinkhorn_divergence(&a, &a, &opts).unwrap().abs() < 1e-9);
    }

    #[test]
    fn power_law_fit_is_exact(exp_idx in 0usize..4, scale in 0.1f64..5.0) {
        let p = [-3.0, -2.0, -1.0, 1.0][exp_idx];
        let grid = linspace(0.02, 0.3, 50);
        let profile = InteractionProfile {
            node: 0,
            response: grid.iter().map(|d| scale * d.powf(p)).collect(),
            grid,
        };
        let fit = fit_power_law(&profile);
        prop_assert!((fit.exponent - p).abs() < 1e-9);
        prop_assert!((fit.scale - scale).abs() < 1e-9 * scale);
    }
}

#[test]
fn projection_is_deterministic_and_near_optimal() {
    let same = project_profiles(&vec![vec![1.0, 2.0, 3.0]; 5]);
    assert!(same.iter().all(|p| p == &[0.0, 0.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let g = if i < 15 { 0.0 } else { 4.0 };
            (0..8).map(|k| g * (k as f64) + rng.random::<f64>()).collect()
        })
        .collect();
    let proj = project_profiles(&rows);
    // Oracle: standardized matrix, top-2 SVD reconstruction error.
    let n = rows.len();
    let x = DMatrix::from_fn(n, 8, |i, k| {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        let sd = (rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        (rows[i][k] - mean) / sd
    });
    let sv = x.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().map(|v| v * v).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let oracle_err: f64 = s[2..].iter().sum();
    let kept: f64 = proj.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let err = x.norm_squared() - kept;
    assert!(err <= oracle_err + 1e-9, "{err} vs {oracle_err}");
    // Two groups separate along the first component.
    let g0: Vec<f64> = proj[..15].iter().map(|p| p[0]).collect();
    let g1: Vec<f64> = proj[15..].iter().map(|p| p[0]).collect();
    let spread = |g: &[f64]| g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - g.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap = (g0.iter().sum::<f64>() / 15.0 - g1.iter().sum::<f64>() / 15.0).abs();
    assert!(gap > 5.0 * spread(&g0).max(spread(&g1)));
    assert_eq!(proj, project_profiles(&rows));
}

#[test]
fn noisy_power_law_exponent_stays_close() {
    let grid = linspace(0.02, 0.3, 100);
    let noise = Normal::new(0.0, 0.01).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = InteractionProfile {
            node: 0,
            response: grid.iter().map(|d| 0.5 / (d * d) * (1.0 + noise.sample(&mut rng))).collect(),
            grid: grid.clone(),
        };
        assert!((fit_power_law(&profile).exponent + 2.0).abs() < 0.05);
    }
}

fn products(q: &[f64]) -> Vec<f64> {
    q.iter().flat_map(|a| q.iter().map(move |b| a * b)).collect()
}

#[test]
fn charges_are_recovered_from_products() {
    let q = [-1.0, 1.0, 2.0];
    let got = recover_charges(&products(&q), 3).unwrap();
    // First node canonicalized positive.
    for (g, t) in got.iter().zip(q.iter().map(|v| -v)) {
        assert!((g - t).abs() < 1e-6, "{got:?}");
    }
    let equal = recover_charges(&vec![4.0; 9], 3).unwrap();
    assert!(equal.iter().all(|v| (v.abs() - 2.0).abs() < 1e-6));
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy: Vec<f64> = products(&q).iter().map(|s| s * (1.0 + noise.sample(&mut rng))).collect();
    let got = recover_charges(&noisy, 3).unwrap();
    for (g, t) in got.iter().zip(q.iter().map(|v| -v)) {
        assert!((g - t).abs() < 2e-2, "{got:?}");
    }
    assert!(recover_charges(&[1.0; 4], 3).is_err());
}

/// Exact OT between equal-size uniform clouds: the best permutation.
fn exact_ot(a: &[Vec2], b: &[Vec2]) -> f64 {
    fn rec(a: &[Vec2], b: &[Vec2], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(a, b, used, i + 1, acc + (a[i] - b[j]).norm_sq(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

#[test]
fn sinkhorn_approaches_exact_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a: Vec<Vec2> = (0..5).map(|_| Vec2::new(rng.random(), rng.random())).collect();
        let b: Vec<Vec2> = (0..5).map(|_| Vec2::new(rng.random(), rng.random())).collect();
        let opts = SinkhornOptions {
            eps: 1e-4,
            max_iter: 5000,
            ..SinkhornOptions::default()
        };
        let s = sinkhorn_divergence(&a, &b, &opts).unwrap();
        let exact = exact_ot(&a, &b);
        assert!((s - exact).abs() <= 1e-3, "{s} vs {exact}");
    }
    assert!(sinkhorn_divergence(&[], &[Vec2::ZERO], &SinkhornOptions::default()).is_err());
}

/// SSIM from per-window moments `E[x^2] - E[x]^2`, independent of the library's
/// centered sums.
fn ssim_oracle(a: &[f64], b: &[f64], side: usize) -> f64 {
    let w1: Vec<f64> = (0..11).map(|k| (-((k as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let total: f64 = w1.iter().sum::<f64>().powi(2);
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let (c1, c2) = ((0.01 * (hi - lo)).powi(2), (0.03 * (hi - lo)).powi(2));
    let mut sum = 0.0;
    let span = side - 10;
    for r in 0..span {
        for c in 0..span {
            let mut m = [0.0; 5];
            for i in 0..11 {
                for j in 0..11 {
                    let w = w1[i] * w1[j] / total;
                    let (x, y) = (a[(r + i) * side + c + j], b[(r + i) * side + c + j]);
                    m[0] += w * x;
                    m[1] += w * y;
                    m[2] += w * x * x;
                    m[3] += w * y * y;
                    m[4] += w * x * y;
                }
            }
            let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
            sum += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
        }
    }
    sum / (span * span) as f64
}

#[test]
fn ssim_matches_direct_formula() {
    let side = 24;
    let a: Vec<f64> = (0..side * side).map(|k| ((k % side) as f64 * 0.4).sin() + (k / side) as f64 * 0.05).collect();
    let shifted: Vec<f64> = (0..side * side).map(|k| a[(k / side) * side + (k % side + 2) % side]).collect();
    let got = ssim(&a, &shifted, side, None).unwrap();
    assert!((got - ssim_oracle(&a, &shifted, side)).abs() < 1e-10);
    assert!(got < 1.0);
    assert!((ssim(&a, &a, side, None).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&a, &a, 5, None).is_err());
}

#[test]
fn metric_identities() {
    let x = [1.0, 2.0, 4.0, 3.0];
    assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&x, &x.map(|v| -2.0 * v)).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(pearson(&x, &[1.0; 4]), None);
    let traj = simulate(&SystemConfig::new(SystemKind::Gravity, 10, 5, 0, types(&[&[1.0]]))).unwrap();
    assert_eq!(rollout_rmse(&traj.frames, &traj.frames, None).unwrap(), 0.0);
    let mut moved = traj.frames.clone();
    for f in moved.iter_mut() {
        for p in f.pos.iter_mut() {
            *p += Vec2::new(0.3, 0.4);
        }
    }
    assert!((rollout_rmse(&traj.frames, &moved, None).unwrap() - 0.5).abs() < 1e-12);
    // Minimum image: a shift of 0.9 in a unit box is a distance of 0.1.
    let mut wrapped = traj.frames.clone();
    for f in wrapped.iter_mut() {
        for p in f.pos.iter_mut() {
            p.x += 0.9;
        }
    }
    assert!((rollout_rmse(&traj.frames, &wrapped, Some(1.0)).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn stub_profiles_reproduce_the_true_curves() {
    let cfg = SystemConfig::new(
        SystemKind::AttractionRepulsion,
        20,
        2,
        0,
        types(&[&[1.5, 1.2, 1.0, 1.8], &[1.1, 1.9, 1.4, 1.0]]),
    );
    let model = stub(&cfg);
    let grid = default_grid(&model, 1.0, 1.0).unwrap();
    assert_eq!(grid.len(), 200);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    let profiles = extract_profiles(&model, &grid, 0.7).unwrap();
    for p in &profiles {
        let params = model.latents.row(p.node);
        for (&d, &r) in p.grid.iter().zip(&p.response) {
            assert!((r - attraction_repulsion_scalar(params, d, 0.005)).abs() < 1e-12);
        }
    }
    assert_eq!(profiles[0].response, profiles[1].response);
    let one = extract_profiles(&model, &[0.03], 0.7).unwrap();
    assert_eq!(one[0].response.len(), 1);
    let clusters = cluster_profiles(&profiles).with_truth(&model.latents.type_id);
    assert_eq!(clusters.accuracy, Some(1.0));
    assert_eq!(clusters.n_clusters, 2);
    assert!(profile_rmse(&profiles[0], &profiles[0]) == 0.0);
}

#[test]
fn stub_gravity_profiles_fit_inverse_square() {
    let cfg = SystemConfig::new(SystemKind::Gravity, 16, 2, 0, types(&[&[1.0], &[2.0], &[4.0], &[8.0]]));
    let model = stub(&cfg);
    let grid = default_grid(&model, 1.0, 1.0).unwrap();
    let fits = fit_masses(&extract_profiles(&model, &grid, 0.7).unwrap());
    let masses: Vec<f64> = fits.iter().map(|f| f.scale).collect();
    for f in &fits {
        assert!((f.exponent + 2.0).abs() < 1e-9);
    }
    let cmp = compare(FitFamily::PowerLaw, &masses, &model.latents.column("m").unwrap());
    assert!((cmp.slope - 1.0).abs() < 1e-9 && cmp.r2 > 1.0 - 1e-12);
    let profile = extract_profiles(&model, &grid, 0.7).unwrap().remove(0);
    assert_eq!(select_form(&profile)[0].form, ProfileForm::PowerLaw);
}

#[test]
fn stub_boids_terms_are_recovered() {
    let cfg = SystemConfig::new(
        SystemKind::Boids,
        10,
        2,
        0,
        types(&[&[5e-5, 0.05, 5e-7], &[1e-4, 0.01, 1e-6]]),
    );
    let model = stub(&cfg);
    let got = fit_boids_terms(&model, 200, 0).unwrap();
    for (i, g) in got.iter().enumerate() {
        let t = model.latents.row(i);
        for k in 0..3 {
            assert!((g[k] - t[k]).abs() <= 1e-6 * t[k].abs(), "{g:?} vs {t:?}");
        }
    }
}

#[test]
fn stub_wave_coefficients_are_exact() {
    let cfg = SystemConfig::new(SystemKind::Wave, 64, 2, 0, types(&[&[0.4], &[0.9]]));
    let model = stub(&cfg);
    let got = fit_wave_coeffs(&model).unwrap();
    let cmp = compare(FitFamily::LinearInLaplacian, &got, &model.latents.column("a").unwrap());
    assert!((cmp.slope - 1.0).abs() < 1e-9 && cmp.r2 > 1.0 - 1e-9);
}

#[test]
fn stub_rps_polynomial_is_recovered() {
    let cfg = SystemConfig::new(SystemKind::Rps, 64, 2, 0, types(&[&[0.3], &[0.8]]));
    let model = stub(&cfg);
    let clusters = truth_clusters(&model.latents.type_id);
    let got = fit_rps_terms(&model, &clusters, 200, 0).unwrap();
    for (c, coeffs) in got.iter().enumerate() {
        let a = model.latents.type_rows()[c][0];
        assert!((coeffs[0] - a).abs() < 1e-9);
        for k in 0..3 {
            let truth = rps_true_poly(k, 0.7);
            for t in 0..10 {
                assert!((coeffs[1 + 10 * k + t] - truth[t]).abs() < 1e-9, "channel {k} term {}", RPS_TERMS[t]);
            }
        }
    }
}

#[test]
fn stub_signaling_fit_recovers_types_and_weights() {
    let cfg = SystemConfig::new(SystemKind::Signaling, 12, 2, 0, types(&[&[1.0, 2.0], &[0.5, 0.2]]));
    let model = stub(&cfg);
    let fit = fit_signaling(&model).unwrap();
    assert!((fit.f_scale - 1.0).abs() < 1e-12);
    for (i, c) in fit.node_coeffs.iter().enumerate() {
        let t = model.latents.row(i);
        assert!((c[0] - t[0]).abs() < 1e-9 && (c[1] - t[1]).abs() < 1e-9);
    }
    assert_eq!(classification_accuracy(&fit.labels, &model.latents.type_id), 1.0);
    let truth: Vec<f64> = model.connectivity().iter().map(|(_, w)| *w).collect();
    let cmp = compare(FitFamily::SignalingSymbolic, &fit.weights, &truth);
    assert!((cmp.slope - 1.0).abs() < 1e-12 && cmp.r2 > 1.0 - 1e-12);
    let grid = linspace(-2.0, 2.0, 60);
    let profile = extract_profiles(&model, &grid, 0.7).unwrap().remove(0);
    assert_eq!(select_form(&profile)[0].form, ProfileForm::LinearTanh);
}

#[test]
fn robust_fit_flags_gross_outliers() {
    let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let mut y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0 + 0.01 * (v * 1.7).sin()).collect();
    y[7] = 100.0;
    let (fit, out) = robust_linear_fit(&x, &y);
    assert!(out[7]);
    assert_eq!(out.iter().filter(|&&o| o).count(), 1);
    assert!((fit.slope - 2.0).abs() < 1e-2);
    assert!(mad_outliers(&[1.0; 5]).iter().all(|&o| !o));
}

#[test]
fn purified_stub_equals_single_type_simulation() {
    let params: [&[f64]; 2] = [&[1.5, 1.2, 1.0, 1.8], &[1.1, 1.9, 1.4, 1.0]];
    let mixed = SystemConfig::new(SystemKind::AttractionRepulsion, 41, 2, 0, types(&params));
    let model = stub(&mixed);
    let clusters = truth_clusters(&model.latents.type_id);
    for t in 0..2 {
        let mut pure = SystemConfig::new(SystemKind::AttractionRepulsion, 60, 40, 9, types(&[params[t]]));
        pure.box_size = 0.4;
        let (lat, env, init) = setup(&pure).unwrap();
        let truth = simulate_from(&pure, env.clone(), lat, init.clone()).unwrap();
        let frames = decompose(&model, &env, &clusters, &vec![t; 60], init, 40).unwrap();
        assert_eq!(frames.len(), truth.len());
        for (k, (a, b)) in frames.iter().zip(&truth.frames).enumerate() {
            for (p, q) in a.pos.iter().zip(&b.pos) {
                assert!((*p - *q).norm() <= 1e-9, "type {t} frame {k}: {p:?} vs {q:?}");
            }
        }
    }
    let (_, env, _) = setup(&mixed).unwrap();
    let empty = crate::dyncore::Frame::zeros(0, 0);
    assert!(decompose(&model, &env, &clusters, &[], empty, 10).unwrap().is_empty());
    let medians = cluster_medians(&model.embeddings(), &clusters);
    assert_eq!(medians.len(), 2);
    assert_eq!(medians[0], [10.0, 0.0]);
}
