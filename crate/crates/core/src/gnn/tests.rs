use alloc::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dyncore::{Frame, Vec2};
use crate::neuralnet::{Tape, Tensor};
use crate::prelude::*;
use crate::simulate::{
    simulate, FieldImage, FieldLayout, FieldSpec, LatentSpec, SystemConfig, SystemKind, Trajectory,
};

fn types(params: &[&[f64]]) -> LatentSpec {
    LatentSpec::Types {
        params: params.iter().map(|p| p.to_vec()).collect(),
    }
}

fn config(kind: SystemKind, steps: usize) -> SystemConfig {
    let (n, latents) = match kind {
        SystemKind::AttractionRepulsion => (90, types(&[&[1.5, 1.2, 1.0, 1.8], &[1.1, 1.9, 1.4, 1.0]])),
        SystemKind::Gravity => (30, types(&[&[1.0], &[3.0]])),
        SystemKind::Coulomb => (30, types(&[&[-1.0], &[1.0], &[2.0]])),
        SystemKind::Boids => (60, types(&[&[5e-5, 0.05, 5e-7], &[1e-4, 0.01, 1e-6]])),
        SystemKind::Wave => (64, types(&[&[0.4], &[0.8]])),
        SystemKind::Rps => (64, types(&[&[0.3], &[0.7]])),
        SystemKind::Signaling => (16, types(&[&[1.0, 2.0], &[0.5, 1.0]])),
    };
    let mut cfg = SystemConfig::new(kind, n, steps, 3, latents);
    if kind == SystemKind::AttractionRepulsion {
        // Small box so a few dozen particles still have neighbors.
        cfg.box_size = 0.25;
    }
    if kind == SystemKind::Boids {
        cfg.box_size = 0.2;
    }
    cfg
}

fn field_config() -> SystemConfig {
    let mut cfg = config(SystemKind::AttractionRepulsion, 4);
    cfg.hidden_field = Some(FieldSpec {
        nodes: 64,
        layout: FieldLayout::Random,
        image: FieldImage::Sinusoid { k: 2.0 },
        drift: None,
    });
    cfg
}

const ALL: [SystemKind; 7] = [
    SystemKind::AttractionRepulsion,
    SystemKind::Gravity,
    SystemKind::Coulomb,
    SystemKind::Boids,
    SystemKind::Wave,
    SystemKind::Rps,
    SystemKind::Signaling,
];

/// Small random model with scales from `data` and scattered embeddings.
fn small_model(data: &[Trajectory], seed: u64) -> GnnModel {
    let spec = ModelSpec::for_data(data).unwrap().with_hidden(8, 8);
    let spec = ModelSpec {
        field_net: spec.field_net.map(|mut f| {
            f.hidden_dim = 8;
            f
        }),
        ..spec
    };
    let env = data[0].environment().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GnnModel::new(spec, env.network.as_ref(), &mut rng).unwrap();
    for i in 0..model.spec.embedding_rows() {
        let a = [rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0];
        let e = model.store.get_mut(model.embeddings.id);
        e.row_mut(i).copy_from_slice(&a);
    }
    model
}

fn one_batch(model: &GnnModel, data: &[Trajectory], t: usize, angle: f64, opts: BatchOptions) -> Batch {
    let envs = environments(data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    build_batch(model, data, &envs, &[Sample { traj: 0, t, angle }], opts, &mut rng).unwrap()
}

fn single() -> BatchOptions {
    BatchOptions {
        multi_step: 1,
        ..BatchOptions::default()
    }
}

/// Physical-unit predictions of the batched forward pass.
fn forward_values(model: &GnnModel, batch: &Batch) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let preds = model.forward(&mut tape, batch).unwrap();
    let s = model.spec.scales.out;
    preds.iter().map(|&p| tape.value(p).data.iter().map(|v| v * s).collect()).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: lengths differ");
    let scale = b.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * scale, "{what}[{k}]: {x} vs {y}");
    }
}

#[test]
fn batched_forward_matches_edge_walker_for_every_kind() {
    for kind in ALL {
        let data = vec![simulate(&config(kind, 3)).unwrap()];
        let model = small_model(&data, 1);
        let env = data[0].environment().unwrap();
        let batch = one_batch(&model, &data, 1, 0.0, single());
        let fast = forward_values(&model, &batch);
        let slow = reference_derivative(&model, &env, &model.embedding_values(), &data[0].frames[1], 1)
            .unwrap()
            .values();
        assert_close(&fast[0], &slow, 1e-10, kind.name());
    }
}

#[test]
fn batched_forward_matches_edge_walker_with_hidden_field() {
    let data = vec![simulate(&field_config()).unwrap()];
    let model = small_model(&data, 2);
    assert!(model.field.is_some());
    let env = data[0].environment().unwrap();
    let batch = one_batch(&model, &data, 0, 0.0, single());
    assert!(batch.field_edges.as_ref().is_some_and(|f| !f.recv.is_empty()));
    let fast = forward_values(&model, &batch);
    let slow = reference_derivative(&model, &env, &model.embedding_values(), &data[0].frames[0], 0)
        .unwrap()
        .values();
    assert_close(&fast[0], &slow, 1e-10, "field");
}

#[test]
fn zero_interaction_net_gives_zero_derivative() {
    let data = vec![simulate(&config(SystemKind::Gravity, 3)).unwrap()];
    let mut model = small_model(&data, 3);
    for id in model.f.as_ref().unwrap().params().collect::<Vec<_>>() {
        model.store.get_mut(id).data.fill(0.0);
    }
    let out = forward_values(&model, &one_batch(&model, &data, 0, 0.0, single()));
    assert!(out[0].iter().all(|&v| v == 0.0));
}

#[test]
fn single_edge_is_one_direct_evaluation() {
    let cfg = config(SystemKind::AttractionRepulsion, 2);
    let mut traj = simulate(&cfg).unwrap();
    let p0 = Vec2::new(0.1, 0.1);
    let p1 = Vec2::new(0.13, 0.12);
    for f in traj.frames.iter_mut() {
        *f = Frame::new(vec![p0, p1], vec![Vec2::ZERO; 2], vec![], 0);
    }
    traj.latents = traj.latents.select(&[0, 1]);
    let data = vec![traj];
    let mut model = small_model(&data, 4);
    model.spec.n_nodes = 2;
    let batch = one_batch(&model, &data, 0, 0.0, single());
    let out = forward_values(&model, &batch);
    let s = model.spec.scales;
    let dx = p1 - p0;
    let a = model.embedding(0);
    let x = Tensor::new(1, 5, vec![a[0], a[1], dx.norm() / s.length, dx.x / s.length, dx.y / s.length]).unwrap();
    let y = model.f.as_ref().unwrap().eval(&model.store, x).unwrap();
    assert_close(&out[0][..2], &[y.at(0, 0) * s.out, y.at(0, 1) * s.out], 1e-12, "edge");
}

#[test]
fn particle_models_are_permutation_equivariant() {
    let cfg = config(SystemKind::Coulomb, 2);
    let traj = simulate(&cfg).unwrap();
    let n = traj.n();
    let data = vec![traj.clone()];
    let model = small_model(&data, 5);
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let mut permuted = traj.clone();
    for f in permuted.frames.iter_mut() {
        *f = f.select(&perm);
    }
    permuted.latents = traj.latents.select(&perm);
    let mut pmodel = model.clone();
    for (new, &old) in perm.iter().enumerate() {
        pmodel.set_embedding(new, model.embedding(old));
    }
    let base = forward_values(&model, &one_batch(&model, &data, 0, 0.0, single()));
    let pdata = vec![permuted];
    let moved = forward_values(&pmodel, &one_batch(&pmodel, &pdata, 0, 0.0, single()));
    for (new, &old) in perm.iter().enumerate() {
        assert_close(&moved[0][2 * new..2 * new + 2], &base[0][2 * old..2 * old + 2], 1e-12, "perm");
    }
}

#[test]
fn learned_connectivity_is_symmetric() {
    let data = vec![simulate(&config(SystemKind::Signaling, 5)).unwrap()];
    let model = small_model(&data, 6);
    let a = model.a_learn.as_ref().unwrap();
    let dense = a.dense(&model.store, 16);
    for i in 0..16 {
        for j in 0..16 {
            assert_eq!(dense[i * 16 + j], dense[j * 16 + i]);
        }
    }
    assert!(a.n_pairs <= a.edges.len());
}

#[test]
fn every_parameter_receives_a_gradient() {
    for cfg in [field_config(), config(SystemKind::Signaling, 5), config(SystemKind::Rps, 4)] {
        let data = vec![simulate(&cfg).unwrap()];
        let mut model = small_model(&data, 7);
        let opts = BatchOptions {
            multi_step: if cfg.kind == SystemKind::AttractionRepulsion { 1 } else { 2 },
            ..BatchOptions::default()
        };
        let batch = one_batch(&model, &data, 0, 0.3, opts);
        let mut tape = Tape::new();
        let (l, _) = batch_loss(&model, &mut tape, &batch).unwrap();
        model.store.zero_grad();
        tape.backward(l, &mut model.store);
        for k in 0..model.store.len() {
            let p = model.store.param(crate::neuralnet::ParamId(k));
            assert!(p.grad.data.iter().any(|&g| g != 0.0), "{} has no gradient", p.name);
        }
    }
}

#[test]
fn truth_stub_rollout_reproduces_the_simulator() {
    for kind in ALL {
        let traj = simulate(&config(kind, 20)).unwrap();
        let env = traj.environment().unwrap();
        let stub = TruthModel::new(env.clone(), traj.latents.clone());
        let frames = rollout(&stub, &env, traj.frames[0].clone(), traj.len() - 1).unwrap();
        assert_eq!(frames.len(), traj.len());
        for (a, b) in frames.iter().zip(&traj.frames) {
            for (p, q) in a.pos.iter().zip(&b.pos) {
                assert!((*p - *q).norm() <= 1e-9, "{kind:?}");
            }
            assert_close(&a.field, &b.field, 1e-9, kind.name());
        }
    }
}

#[test]
fn truth_stub_with_hidden_field_reproduces_the_simulator() {
    let traj = simulate(&field_config()).unwrap();
    let env = traj.environment().unwrap();
    let stub = TruthModel::new(env.clone(), traj.latents.clone());
    let frames = rollout(&stub, &env, traj.frames[0].clone(), traj.len() - 1).unwrap();
    for (a, b) in frames.iter().zip(&traj.frames) {
        for (p, q) in a.pos.iter().zip(&b.pos) {
            assert!((*p - *q).norm() <= 1e-12);
        }
    }
}

#[test]
fn loss_is_masked_sum_of_squares() {
    let data = vec![simulate(&config(SystemKind::Wave, 3)).unwrap()];
    let model = small_model(&data, 8);
    let batch = one_batch(&model, &data, 0, 0.0, single());
    let mut tape = Tape::new();
    let (l, preds) = batch_loss(&model, &mut tape, &batch).unwrap();
    let p = tape.value(preds[0]);
    let t = &batch.targets[0];
    let mut want = 0.0;
    for i in 0..batch.n_nodes {
        if batch.loss_mask[i] {
            want += (p.at(i, 0) - t.at(i, 0)).powi(2);
        }
    }
    assert!((tape.value(l).item() - want).abs() <= 1e-12 * want.max(1.0));
    // Boundary rows are zero in both prediction and target.
    let mesh = data[0].environment().unwrap().mesh.unwrap();
    for (i, &b) in mesh.boundary.iter().enumerate() {
        if b {
            assert_eq!(p.at(i, 0), 0.0);
            assert_eq!(t.at(i, 0), 0.0);
        }
    }
}

#[test]
fn loss_of_a_perfect_stub_batch_is_zero_and_noise_is_replayed() {
    let data = vec![simulate(&config(SystemKind::Boids, 3)).unwrap()];
    let model = small_model(&data, 9);
    let mut batch = one_batch(&model, &data, 0, 0.0, single());
    // Substitute the prediction for the target: zero loss.
    let mut tape = Tape::new();
    let preds = model.forward(&mut tape, &batch).unwrap();
    batch.targets[0] = tape.value(preds[0]).clone();
    assert_eq!(loss(&model, &batch).unwrap(), 0.0);
    // Off by one scaled unit in x on every loss node.
    let n_loss = batch.loss_mask.iter().filter(|&&m| m).count() as f64;
    for r in 0..batch.n_nodes {
        batch.targets[0].row_mut(r)[0] += 1.0;
    }
    let s = model.spec.scales.out;
    assert!((loss(&model, &batch).unwrap() - n_loss * s * s).abs() < 1e-9 * n_loss * s * s);
    // Noise is fixed per batch, so the loss is reproducible.
    let envs = environments(&data).unwrap();
    let opts = BatchOptions {
        noise_sigma: 0.3,
        ..single()
    };
    let sample = [Sample { traj: 0, t: 0, angle: 0.0 }];
    let b1 = build_batch(&model, &data, &envs, &sample, opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b2 = build_batch(&model, &data, &envs, &sample, opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(loss(&model, &b1).unwrap(), loss(&model, &b2).unwrap());
    assert!(b1.noise[0].data.iter().any(|&e| e != 0.0));
}

#[test]
fn two_step_prediction_feeds_back_the_first_step() {
    for kind in [SystemKind::Signaling, SystemKind::Rps] {
        let data = vec![simulate(&config(kind, 6)).unwrap()];
        let model = small_model(&data, 10);
        let env = data[0].environment().unwrap();
        let two = BatchOptions {
            multi_step: 2,
            ..BatchOptions::default()
        };
        let preds = forward_values(&model, &one_batch(&model, &data, 1, 0.0, two));
        let once = forward_values(&model, &one_batch(&model, &data, 1, 0.0, single()));
        assert_close(&preds[0], &once[0], 1e-14, "first step");
        // Second step equals the edge walker on the Euler-advanced state.
        let mut frame = data[0].frames[1].clone();
        for (u, d) in frame.field.iter_mut().zip(&preds[0]) {
            *u += env.dt * d;
        }
        let slow = reference_derivative(&model, &env, &model.embedding_values(), &frame, 2).unwrap().values();
        assert_close(&preds[1], &slow, 1e-10, kind.name());
    }
}

#[test]
fn bootstrap_sets_cluster_medians() {
    let data = vec![simulate(&config(SystemKind::Wave, 3)).unwrap()];
    let mut model = small_model(&data, 11);
    let n = model.spec.n_nodes;
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let before = model.embedding_values();
    model.bootstrap_embeddings(&labels).unwrap();
    let after = model.embedding_values();
    for c in 0..2 {
        let mut xs: Vec<f64> = (0..n).filter(|&i| labels[i] == c).map(|i| before[i][0]).collect();
        xs.sort_by(f64::total_cmp);
        let k = xs.len();
        let med = if k % 2 == 1 { xs[k / 2] } else { 0.5 * (xs[k / 2 - 1] + xs[k / 2]) };
        for i in (0..n).filter(|&i| labels[i] == c) {
            assert_eq!(after[i][0], med);
        }
    }
    assert!(model.bootstrap_embeddings(&labels[1..]).is_err());
}

#[test]
fn ghosts_send_messages_but_stay_out_of_the_loss() {
    let data = vec![simulate(&config(SystemKind::AttractionRepulsion, 3)).unwrap()];
    let n = data[0].n();
    let mut model = small_model(&data, 12);
    model.spec.n_ghosts = 0;
    let plain = one_batch(&model, &data, 0, 0.0, single());
    let spec = model.spec.clone().with_ghosts(40);
    let model = GnnModel::new(spec, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let opts = BatchOptions {
        ghosts: 40,
        ..single()
    };
    let ghosted = one_batch(&model, &data, 0, 0.0, opts);
    assert_eq!(ghosted.n_nodes, n + 40);
    assert!(ghosted.loss_mask[..n].iter().all(|&m| m));
    assert!(ghosted.loss_mask[n..].iter().all(|&m| !m));
    assert!(ghosted.recv.len() > plain.recv.len());
    // Ghosts never receive.
    assert!(ghosted.recv.iter().all(|&r| r < n));
    assert!(ghosted.emb_rows.iter().all(|&r| r < model.spec.embedding_rows()));
    let too_many = BatchOptions {
        ghosts: 41,
        ..single()
    };
    let envs = environments(&data).unwrap();
    let sample = [Sample { traj: 0, t: 0, angle: 0.0 }];
    assert!(build_batch(&model, &data, &envs, &sample, too_many, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn rotated_samples_rotate_targets() {
    let data = vec![simulate(&config(SystemKind::Boids, 3)).unwrap()];
    let model = small_model(&data, 13);
    let a = one_batch(&model, &data, 0, 0.0, single());
    let b = one_batch(&model, &data, 0, 1.1, single());
    for i in 0..a.n_nodes {
        let v = Vec2::new(a.targets[0].at(i, 0), a.targets[0].at(i, 1)).rotated(1.1);
        assert!((v - Vec2::new(b.targets[0].at(i, 0), b.targets[0].at(i, 1))).norm() < 1e-12);
    }
    assert_eq!(a.recv, b.recv);
}

fn quick_cfg(kind: SystemKind) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        n_rotations: 1,
        max_batches_per_epoch: Some(3),
        bootstrap_every: 1,
        ..TrainConfig::for_kind(kind)
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let data = vec![simulate(&config(SystemKind::Wave, 4)).unwrap()];
    let model = small_model(&data, 14);
    let cfg = TrainConfig {
        epochs: 0,
        ..quick_cfg(SystemKind::Wave)
    };
    let (trained, log) = train(model.clone(), &data, cfg).unwrap();
    assert_eq!(trained, model);
    assert!(log.records.is_empty());
}

#[test]
fn training_is_deterministic_and_resumable() {
    let data = vec![simulate(&config(SystemKind::AttractionRepulsion, 5)).unwrap()];
    let model = small_model(&data, 15);
    let cfg = quick_cfg(SystemKind::AttractionRepulsion);
    let (a, log_a) = train(model.clone(), &data, cfg.clone()).unwrap();
    let (b, _) = train(model.clone(), &data, cfg.clone()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, model);
    assert_eq!(log_a.bootstraps, vec![1]);
    assert_eq!(log_a.epoch_loss.len(), 2);
    // Stop after one epoch, checkpoint, resume.
    let mut first = Trainer::new(model, cfg).unwrap();
    let envs = environments(&data).unwrap();
    first.run_epoch(&data, &envs).unwrap();
    let mut resumed = first.clone();
    resumed.run(&data).unwrap();
    assert_eq!(resumed.model, a);
    assert_eq!(resumed.log, log_a);
}

#[test]
fn single_step_signaling_training_is_refused() {
    let data = vec![simulate(&config(SystemKind::Signaling, 5)).unwrap()];
    let model = small_model(&data, 16);
    let cfg = TrainConfig {
        multi_step: 1,
        ..quick_cfg(SystemKind::Signaling)
    };
    assert!(Trainer::new(model.clone(), cfg.clone()).is_err());
    let allowed = TrainConfig {
        allow_single_step_signaling: true,
        ..cfg
    };
    assert!(Trainer::new(model, allowed).is_ok());
    assert!(TrainConfig {
        multi_step: 2,
        ..TrainConfig::default()
    }
    .validate(SystemKind::Gravity)
    .is_err());
}

#[test]
fn reference_layer_sizes_have_the_published_parameter_counts() {
    use crate::neuralnet::MlpSpec;
    let ar = ModelSpec::new(SystemKind::AttractionRepulsion, 10, SystemKind::AttractionRepulsion.default_band().map(|b| b.to_band(1.0)));
    assert_eq!(ar.f_net.unwrap().param_count(), 50562);
    assert_eq!(ModelSpec::new(SystemKind::Wave, 16, None).phi_net.unwrap().param_count(), 897);
    let sig = ModelSpec::new(SystemKind::Signaling, 4, None);
    assert_eq!(sig.phi_net.unwrap().param_count(), 4481);
    assert_eq!(sig.f_net.unwrap().param_count(), 4353);
    assert_eq!(MlpSpec::periodic(3, 128, 1, 7).param_count(), 83201);
}

#[test]
fn scatter_indices_are_shared_not_copied() {
    let data = vec![simulate(&config(SystemKind::Wave, 3)).unwrap()];
    let model = small_model(&data, 17);
    let batch = one_batch(&model, &data, 0, 0.0, single());
    let clone = batch.clone();
    assert!(Arc::ptr_eq(&batch.recv, &clone.recv));
}

#[test]
fn receivers_of_sub_cutoff_pairs_leave_the_loss() {
    let data = vec![simulate(&config(SystemKind::Gravity, 3)).unwrap()];
    let model = small_model(&data, 1);
    let mut frame = data[0].frames[0].clone();
    // Nodes 0 and 1 sit inside the simulator band but under the model's cutoff.
    frame.pos[1] = frame.pos[0] + Vec2::new(0.5 * SINGULAR_D_MIN, 0.0);
    let env = data[0].environment().unwrap();
    let hidden = hidden_close_pairs(&model.spec, &env, &frame.pos).unwrap();
    assert!(hidden[0] && hidden[1]);
    let mut moved = data.clone();
    moved[0].frames[0] = frame;
    let batch = one_batch(&model, &moved, 0, 0.0, single());
    assert!(!batch.loss_mask[0] && !batch.loss_mask[1]);
    let ar = vec![simulate(&config(SystemKind::AttractionRepulsion, 3)).unwrap()];
    let ar_model = small_model(&ar, 1);
    let ar_env = ar[0].environment().unwrap();
    assert!(hidden_close_pairs(&ar_model.spec, &ar_env, &ar[0].frames[0].pos).unwrap().iter().all(|h| !h));
}
