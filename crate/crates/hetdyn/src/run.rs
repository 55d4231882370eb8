//! Training run directories:
//!
//! ```text
//! config.json          run config snapshot (data path and hash, train config, model spec)
//! metrics.csv          epoch,step,loss per optimizer step
//! embeddings/epoch_NNNN.hdyn
//! checkpoint.ckpt      latest epoch boundary
//! manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use hetdyn_core::gnn::{ModelSpec, TrainConfig, TrainLog, Trainer};
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockReader, BlockWriter};
use crate::checkpoint::save_checkpoint;
use crate::error::{HdynError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const EMBEDDING_DIR: &str = "embeddings";

const EMBEDDING_FORMAT: &str = "hdyn-embedding";
const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub data_sha256: String,
    pub train: TrainConfig,
    pub model: ModelSpec,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    epoch: usize,
    n_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(EMBEDDING_DIR)).map_err(|e| HdynError::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join(CHECKPOINT_FILE)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn embedding_path(&self, epoch: usize) -> PathBuf {
        self.root.join(EMBEDDING_DIR).join(format!("epoch_{epoch:04}.hdyn"))
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        let path = self.config_path();
        let text = serde_json::to_string_pretty(cfg).expect("run config serializes");
        fs::write(&path, text).map_err(|e| HdynError::io(&path, e))
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        let path = self.config_path();
        let text = fs::read_to_string(&path).map_err(|e| HdynError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HdynError::parse(&path, e.to_string()))
    }

    /// Rewrites the metrics table from the log, so a resumed run ends with the same
    /// file as an uninterrupted one.
    pub fn write_metrics(&self, log: &TrainLog) -> Result<()> {
        let path = self.metrics_path();
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for r in &log.records {
            w.serialize(r).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| HdynError::io(&path, e))
    }

    pub fn write_embeddings(&self, epoch: usize, emb: &[[f64; 2]]) -> Result<()> {
        let header = EmbeddingHeader {
            epoch,
            n_nodes: emb.len(),
        };
        let mut w = BlockWriter::new(EMBEDDING_FORMAT, EMBEDDING_VERSION, &header);
        w.block("embedding", &emb.concat());
        w.write(&self.embedding_path(epoch))
    }

    /// Snapshot of the latest completed epoch: metrics, embeddings, checkpoint.
    pub fn save(&self, trainer: &Trainer) -> Result<()> {
        self.write_metrics(&trainer.log)?;
        if let Some(emb) = trainer.log.embeddings.last() {
            self.write_embeddings(trainer.epoch, emb)?;
        }
        save_checkpoint(trainer, &self.checkpoint_path())
    }
}

/// Reads an embedding snapshot as `(epoch, rows)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<[f64; 2]>)> {
    let mut r = BlockReader::open(path)?;
    let h: EmbeddingHeader = r.header(EMBEDDING_FORMAT, EMBEDDING_VERSION)?;
    let values = r.block("embedding", Some(2 * h.n_nodes))?;
    r.finish()?;
    Ok((h.epoch, values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> HdynError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HdynError::io(path, io),
        other => HdynError::parse(path, format!("{other:?}")),
    }
}
