use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{build_batch, Batch, BatchOptions, Sample};
use super::model::GnnModel;
use super::spec::TrainConfig;
use crate::neuralnet::{Adam, Tape, Tensor, Var};
use crate::prelude::*;
use crate::simulate::{rng_for, Environment, Trajectory};
use crate::{Error, Result};

/// Squared error over loss nodes and channels, summed over predicted steps, in
/// scaled units. Returns the loss and the per-step predictions.
pub fn batch_loss(model: &GnnModel, tape: &mut Tape, batch: &Batch) -> Result<(Var, Vec<Var>)> {
    let preds = model.forward(tape, batch)?;
    let mask = tape.leaf(batch.mask_column());
    let mut total: Option<Var> = None;
    for (k, &p) in preds.iter().enumerate() {
        let target = tape.leaf(batch.noisy_target(k));
        let diff = tape.sub(p, target);
        let diff = tape.mul_col(diff, mask);
        let l = tape.sum_sq(diff);
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidInput("batch predicts no steps".into()))?;
    Ok((total, preds))
}

/// Loss of `batch` in physical units, without recording gradients for later use.
pub fn loss(model: &GnnModel, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let (l, _) = batch_loss(model, &mut tape, batch)?;
    let s = model.spec.scales.out;
    Ok(tape.value(l).item() * s * s)
}

/// First non-finite or largest-magnitude prediction, as (union node, magnitude).
fn worst_node(t: &Tensor) -> (usize, f64) {
    let mut worst = (0, 0.0f64);
    for r in 0..t.rows {
        for &v in t.row(r) {
            if !v.is_finite() {
                return (r, v);
            }
            if v.abs() > worst.1 {
                worst = (r, v.abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Loss curve and embedding history of a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Per optimizer step, loss in physical units per frame.
    pub records: Vec<StepRecord>,
    /// Mean batch loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
    /// Observed-node embeddings after each completed epoch.
    pub embeddings: Vec<Vec<[f64; 2]>>,
    /// Epochs at whose start the embeddings were bootstrapped.
    pub bootstraps: Vec<usize>,
}

/// Optimizer state of a run; checkpointing it at an epoch boundary and resuming
/// reproduces the uninterrupted run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub model: GnnModel,
    pub cfg: TrainConfig,
    pub opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub log: TrainLog,
}

const STREAM_EPOCH: u64 = 1000;

impl Trainer {
    pub fn new(model: GnnModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.kind())?;
        if cfg.ghost_count > model.spec.n_ghosts {
            return Err(Error::config(
                "ghost_count",
                format!("model has {} ghost embeddings, {} requested", model.spec.n_ghosts, cfg.ghost_count),
            ));
        }
        let opt = Adam::new(&model.store, cfg.lr, cfg.grad_mode);
        Ok(Trainer {
            model,
            cfg,
            opt,
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    /// All usable frames, repeated with fresh random rotations for rotation-invariant
    /// kinds, shuffled.
    pub fn epoch_samples<R: Rng>(&self, data: &[Trajectory], rng: &mut R) -> Vec<Sample> {
        let kind = self.model.kind();
        let rotate = kind.rotation_invariant();
        let passes = if rotate { self.cfg.n_rotations.max(1) } else { 1 };
        let k = self.cfg.multi_step.max(1);
        let mut samples = Vec::new();
        for _ in 0..passes {
            for (traj, d) in data.iter().enumerate() {
                for t in 0..d.len().saturating_sub(k) {
                    let angle = if rotate { 2.0 * PI * rng.random::<f64>() } else { 0.0 };
                    samples.push(Sample { traj, t, angle });
                }
            }
        }
        samples.shuffle(rng);
        samples
    }

    fn options(&self) -> BatchOptions {
        BatchOptions {
            noise_sigma: self.cfg.noise_sigma,
            ghosts: self.cfg.ghost_count,
            multi_step: self.cfg.multi_step,
        }
    }

    /// One epoch; returns its mean batch loss.
    pub fn run_epoch(&mut self, data: &[Trajectory], envs: &[Environment]) -> Result<f64> {
        let epoch = self.epoch;
        let mut rng = rng_for(self.cfg.seed, STREAM_EPOCH + epoch as u64);
        if self.cfg.bootstrap && epoch > 0 && epoch % self.cfg.bootstrap_every == 0 {
            let clusters = crate::analyze::cluster_model(&self.model, envs.first())?;
            self.model.bootstrap_embeddings(&clusters.labels)?;
            self.log.bootstraps.push(epoch);
        }
        self.opt.lr = self.cfg.lr * crate::math::pow(self.cfg.lr_decay, epoch as f64);
        let samples = self.epoch_samples(data, &mut rng);
        let mut batches: Vec<&[Sample]> = samples.chunks(self.cfg.batch_size).collect();
        if let Some(cap) = self.cfg.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let scale = self.model.spec.scales.out * self.model.spec.scales.out;
        let mut total = 0.0;
        for (step, chunk) in batches.iter().enumerate() {
            let batch = build_batch(&self.model, data, envs, chunk, self.options(), &mut rng)?;
            let mut tape = Tape::new();
            let (l, preds) = batch_loss(&self.model, &mut tape, &batch)?;
            let value = tape.value(l).item();
            if !value.is_finite() {
                let (node, magnitude) = preds
                    .iter()
                    .map(|&p| worst_node(tape.value(p)))
                    .find(|(_, m)| !m.is_finite())
                    .unwrap_or((0, value));
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: step,
                    node: batch.emb_rows.get(node).copied().unwrap_or(node),
                    magnitude,
                });
            }
            self.model.store.zero_grad();
            tape.backward(l, &mut self.model.store);
            self.opt.step(&mut self.model.store);
            let per_frame = value * scale / chunk.len() as f64;
            total += per_frame;
            self.log.records.push(StepRecord {
                epoch,
                step,
                loss: per_frame,
            });
        }
        let mean = total / batches.len().max(1) as f64;
        self.log.epoch_loss.push(mean);
        self.log.embeddings.push(self.model.embedding_values());
        self.epoch += 1;
        Ok(mean)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run_with(
        &mut self,
        data: &[Trajectory],
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let envs = environments(data)?;
        while self.epoch < self.cfg.epochs {
            self.run_epoch(data, &envs)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self, data: &[Trajectory]) -> Result<()> {
        self.run_with(data, |_| Ok(()))
    }
}

pub fn environments(data: &[Trajectory]) -> Result<Vec<Environment>> {
    data.iter().map(Trajectory::environment).collect()
}

/// Trains `model` on `data`; returns the trained model and its log.
pub fn train(model: GnnModel, data: &[Trajectory], cfg: TrainConfig) -> Result<(GnnModel, TrainLog)> {
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.run(data)?;
    Ok((trainer.model, trainer.log))
}
