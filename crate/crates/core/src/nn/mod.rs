//! Minimal convolutional network engine: five layer kinds, batched forward
//! inference and a reverse pass that yields input and weight gradients.

mod engine;
mod format;
mod layer;
mod model;

pub(crate) use engine::softmax_in_place;
pub use engine::{
    backward, backward_to_input, forward, forward_batch, softmax, softmax_rows, ForwardTrace, ParamGrads,
};
pub use format::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layer::{Layer, LayerSpec};
pub use model::{HostModel, ModelMetadata, Provenance};
