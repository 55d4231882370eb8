//! Message-passing models with per-node latent embeddings, their losses and the
//! training loop.

mod batch;
mod model;
mod reference;
mod spec;
mod train;

pub use batch::{
    add_ghosts, build_batch, hidden_close_pairs, model_band, snapshot, Batch, BatchOptions, FieldEdges, Sample,
};
pub use model::{GnnModel, SymmetricWeights};
pub use reference::{
    reference_derivative, rollout, EdgeQuery, InteractionModel, ModelDynamics, TruthModel,
};
pub use spec::{estimate_scales, Aggregation, ModelSpec, Scales, TrainConfig, SINGULAR_D_MIN};
pub use train::{batch_loss, environments, loss, train, StepRecord, TrainLog, Trainer};

#[cfg(test)]
mod tests;
