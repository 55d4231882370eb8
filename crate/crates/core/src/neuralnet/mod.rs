//! Dense 2-D tensors with tape-based reverse-mode differentiation, MLPs, embedding
//! tables and the Adam optimizer.

mod augment;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use augment::{rotate_batch, rotate_in_place};
pub use mlp::{Activation, EmbeddingTable, Mlp, MlpSpec};
pub use params::{Adam, GradMode, Param, ParamId, ParamStore};
pub use tape::{Act, Tape, Var};
pub use tensor::{matmul, Tensor};
