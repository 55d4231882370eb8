//! Checkpoints: a JSON header holding the trainer with its numeric arrays emptied
//! (spec, train config, optimizer mode and step, log), then the parameter values
//! and both Adam moments as little-endian blocks. Round trips are exact.

use std::path::Path;

use hetdyn_core::gnn::{GnnModel, Trainer};
use hetdyn_core::neuralnet::GradMode;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockReader, BlockWriter};
use crate::error::{HdynError, Result};

pub const CHECKPOINT_FORMAT: &str = "hdyn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    epoch: usize,
    optimizer_step: u64,
    grad_mode: GradMode,
    n_values: usize,
    trainer: Trainer,
}

fn skeleton(trainer: &Trainer) -> Trainer {
    let mut t = trainer.clone();
    for p in &mut t.model.store.params {
        p.value.data = Vec::new();
    }
    t.opt.m = Vec::new();
    t.opt.v = Vec::new();
    t
}

pub fn checkpoint_bytes(trainer: &Trainer) -> Vec<u8> {
    let values = trainer.model.store.flat_values();
    let header = Header {
        epoch: trainer.epoch,
        optimizer_step: trainer.opt.step,
        grad_mode: trainer.opt.mode,
        n_values: values.len(),
        trainer: skeleton(trainer),
    };
    let mut w = BlockWriter::new(CHECKPOINT_FORMAT, CHECKPOINT_VERSION, &header);
    w.block("params", &values).block("adam_m", &trainer.opt.m).block("adam_v", &trainer.opt.v);
    w.into_bytes()
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HdynError::io(dir, e))?;
    }
    // Write then rename so an interrupted run never leaves a half checkpoint.
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, checkpoint_bytes(trainer)).map_err(|e| HdynError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HdynError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let mut r = BlockReader::open(path)?;
    let h: Header = r.header(CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    let values = r.block("params", Some(h.n_values))?;
    let m = r.block("adam_m", Some(h.n_values))?;
    let v = r.block("adam_v", Some(h.n_values))?;
    r.finish()?;
    let mut trainer = h.trainer;
    let mut k = 0;
    for p in &mut trainer.model.store.params {
        let len = p.value.rows * p.value.cols;
        let chunk = values
            .get(k..k + len)
            .ok_or_else(|| HdynError::parse(path, "parameter shapes exceed the stored values"))?;
        p.value.data = chunk.to_vec();
        k += len;
    }
    if k != values.len() {
        return Err(HdynError::parse(path, "stored values do not match the parameter shapes"));
    }
    trainer.model.store.zero_grad();
    trainer.opt.m = m;
    trainer.opt.v = v;
    Ok(trainer)
}

/// The model of a checkpoint.
pub fn load_model(path: &Path) -> Result<GnnModel> {
    Ok(load_checkpoint(path)?.model)
}
