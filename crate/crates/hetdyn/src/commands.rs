//! The work behind each subcommand, callable without going through argument
//! parsing. Every command writes only below its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use hetdyn_core::analyze::{rollout_rmse, sinkhorn_divergence, SinkhornOptions};
use hetdyn_core::gnn::{rollout, GnnModel, InteractionModel, ModelSpec, TrainConfig, Trainer, TruthModel};
use hetdyn_core::simulate::{simulate_series, SystemKind, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis, AnalysisOptions};
use crate::checkpoint::load_checkpoint;
use crate::config::read_simulate_config;
use crate::dataset::{read_series, write_series};
use crate::error::{HdynError, Result};
use crate::manifest::{sha256_hex, unix_now, RunManifest};
use crate::report::write_analysis;
use crate::run::{RunConfig, RunDir};

pub const DATASET_FILE: &str = "data.hdyn";
pub const ROLLOUT_FILE: &str = "rollout.hdyn";
pub const SUMMARY_FILE: &str = "summary.json";
/// `--model` value that stands for the ground-truth rules of the dataset.
pub const TRUTH_MODEL: &str = "truth";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HdynError::io(dir, e))
}

/// Simulates the config's series into `out/data.hdyn`; returns the dataset path.
pub fn simulate_cmd(config: &Path, out: &Path, seed: Option<u64>, argv: Vec<String>) -> Result<PathBuf> {
    let started = unix_now();
    let mut file = read_simulate_config(config)?;
    if let Some(s) = seed {
        file.system.seed = s;
    }
    let series = simulate_series(&file.system, file.series)?;
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    write_series(&series, &path)?;
    RunManifest::new(argv, config, file.system.seed, out, started)?.write()?;
    Ok(path)
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub train: Option<TrainConfig>,
    pub hidden: Option<usize>,
    pub resume: bool,
}

/// A fresh model for `data` with `hidden` units and `ghosts` extra embeddings.
pub fn new_model(data: &[Trajectory], hidden: Option<usize>, ghosts: usize, seed: u64) -> Result<GnnModel> {
    let mut spec = ModelSpec::for_data(data)?;
    if let Some(h) = hidden {
        spec = spec.with_hidden(h, h);
        if let Some(f) = &mut spec.field_net {
            f.hidden_dim = h;
        }
    }
    let spec = spec.with_ghosts(ghosts);
    let env = data[0].environment()?;
    Ok(GnnModel::new(spec, env.network.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed))?)
}

/// Trains on `args.data` inside the run directory `args.out`, checkpointing after
/// every epoch. With `resume`, continues from the directory's checkpoint, which
/// must come from the same data and model.
pub fn train_cmd(args: &TrainArgs, argv: Vec<String>) -> Result<Trainer> {
    let started = unix_now();
    let bytes = fs::read(&args.data).map_err(|e| HdynError::io(&args.data, e))?;
    let data_sha256 = sha256_hex(&bytes);
    drop(bytes);
    let data = read_series(&args.data)?;
    let kind = data[0].kind();
    let cfg = args.train.clone().unwrap_or_else(|| TrainConfig::for_kind(kind));
    cfg.validate(kind)?;
    let run = RunDir::create(&args.out)?;
    let mut trainer = if args.resume && run.checkpoint_path().exists() {
        let previous = run.read_config()?;
        if previous.data_sha256 != data_sha256 {
            return Err(HdynError::Usage("cannot resume: the run was trained on different data".into()));
        }
        let mut t = load_checkpoint(&run.checkpoint_path())?;
        let mut same = t.cfg.clone();
        same.epochs = cfg.epochs;
        if same != cfg {
            return Err(HdynError::Usage("cannot resume: training settings differ from the checkpoint".into()));
        }
        t.cfg.epochs = cfg.epochs;
        t
    } else {
        let model = new_model(&data, args.hidden, cfg.ghost_count, cfg.seed)?;
        Trainer::new(model, cfg.clone())?
    };
    let run_cfg = RunConfig {
        data: args.data.clone(),
        data_sha256,
        train: trainer.cfg.clone(),
        model: trainer.model.spec.clone(),
    };
    run.write_config(&run_cfg)?;
    trainer.run_with(&data, |t| {
        run.save(t).map_err(|e| hetdyn_core::Error::InvalidInput(e.to_string()))
    })?;
    run.save(&trainer)?;
    RunManifest::new(argv, &run.config_path(), trainer.cfg.seed, &args.out, started)?.write()?;
    Ok(trainer)
}

/// A trained model, or the ground-truth stub for [`TRUTH_MODEL`].
pub enum LoadedModel {
    Trained(Box<GnnModel>),
    Truth(Box<TruthModel>),
}

impl LoadedModel {
    pub fn load(spec: &str, data: &[Trajectory]) -> Result<Self> {
        if spec == TRUTH_MODEL {
            let t = &data[0];
            return Ok(LoadedModel::Truth(Box::new(TruthModel::new(t.environment()?, t.latents.clone()))));
        }
        let mut path = PathBuf::from(spec);
        if path.is_dir() {
            path = path.join(crate::run::CHECKPOINT_FILE);
        }
        // A wrong --model is a usage mistake, not an I/O failure.
        if !path.is_file() {
            return Err(HdynError::Usage(format!("model `{}` not found", path.display())));
        }
        Ok(LoadedModel::Trained(Box::new(load_checkpoint(&path)?.model)))
    }

    pub fn as_dyn(&self) -> &dyn InteractionModel {
        match self {
            LoadedModel::Trained(m) => m.as_ref(),
            LoadedModel::Truth(m) => m.as_ref(),
        }
    }

    /// File recorded as the manifest's config: the checkpoint, or the data for
    /// the ground-truth stub.
    fn source(spec: &str, data: &Path) -> PathBuf {
        if spec == TRUTH_MODEL {
            return data.to_path_buf();
        }
        let path = PathBuf::from(spec);
        if path.is_dir() {
            path.join(crate::run::CHECKPOINT_FILE)
        } else {
            path
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub series: usize,
    /// Frames compared against the data (the rollout may run past its end).
    pub compared_frames: usize,
    pub rmse: f64,
    pub sinkhorn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub kind: SystemKind,
    pub steps: usize,
    pub series: Vec<SeriesScore>,
    pub mean_rmse: f64,
}

/// Rolls the model out from the first frame of every series for `steps` steps
/// and scores it against the data.
pub fn rollout_cmd(model: &str, data_path: &Path, steps: usize, out: &Path, argv: Vec<String>) -> Result<RolloutSummary> {
    let started = unix_now();
    let data = read_series(data_path)?;
    let loaded = LoadedModel::load(model, &data)?;
    let m = loaded.as_dyn();
    if m.kind() != data[0].kind() || m.n_nodes() != data[0].n() {
        return Err(HdynError::Usage("model and data describe different systems".into()));
    }
    let env = data[0].environment()?;
    let periodic = env.wrap();
    let kind = data[0].kind();
    let results: Vec<Result<(Trajectory, SeriesScore)>> = data
        .par_iter()
        .enumerate()
        .map(|(k, traj)| {
            let frames = rollout(m, &env, traj.frames[0].clone(), steps)?;
            let t = frames.len().min(traj.len());
            let rmse = if kind.is_particle() {
                rollout_rmse(&traj.frames[..t], &frames[..t], periodic)?
            } else {
                let (mut s, mut c) = (0.0, 0usize);
                for (a, b) in traj.frames[..t].iter().zip(&frames[..t]) {
                    for (x, y) in a.field.iter().zip(&b.field) {
                        s += (x - y) * (x - y);
                        c += 1;
                    }
                }
                (s / c.max(1) as f64).sqrt()
            };
            let sinkhorn = if kind.is_particle() {
                let opts = SinkhornOptions {
                    periodic,
                    ..SinkhornOptions::default()
                };
                Some(sinkhorn_divergence(&traj.frames[t - 1].pos, &frames[t - 1].pos, &opts)?)
            } else {
                None
            };
            let predicted = Trajectory {
                frames,
                ..traj.clone()
            };
            Ok((
                predicted,
                SeriesScore {
                    series: k,
                    compared_frames: t,
                    rmse,
                    sinkhorn,
                },
            ))
        })
        .collect();
    let mut predicted = Vec::with_capacity(results.len());
    let mut scores = Vec::with_capacity(results.len());
    for r in results {
        let (p, s) = r?;
        predicted.push(p);
        scores.push(s);
    }
    create_dir(out)?;
    write_series(&predicted, &out.join(ROLLOUT_FILE))?;
    let summary = RolloutSummary {
        kind,
        steps,
        mean_rmse: scores.iter().map(|s| s.rmse).sum::<f64>() / scores.len() as f64,
        series: scores,
    };
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| HdynError::io(&path, e))?;
    RunManifest::new(argv, &LoadedModel::source(model, data_path), 0, out, started)?.write()?;
    Ok(summary)
}

pub fn analyze_cmd(model: &str, data_path: &Path, opts: &AnalysisOptions, out: &Path, argv: Vec<String>) -> Result<Analysis> {
    let started = unix_now();
    let data = read_series(data_path)?;
    let loaded = LoadedModel::load(model, &data)?;
    let analysis = analyze(loaded.as_dyn(), &data, opts)?;
    create_dir(out)?;
    write_analysis(&analysis, out)?;
    RunManifest::new(argv, &LoadedModel::source(model, data_path), opts.seed, out, started)?.write()?;
    Ok(analysis)
}
