//! Minimal dense-tensor autodiff: tensors, a recording tape, the layers the
//! inpainting network is built from, Adam, and checkpoint serialization.

mod adam;
mod checkpoint;
mod graph;
pub mod gradcheck;
mod layers;
mod params;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, Record, RecordData, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{attention_weights, Graph, Var};
pub use layers::{FrameMlp, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub(crate) use checkpoint::ByteReader;

/// Scalar activation functions, exposed for reference checks.
pub mod activation {
    pub use super::graph::{elu, gelu, softplus};
}
