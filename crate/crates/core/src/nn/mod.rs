//! Small layered classifier with per-example gradients, layer freezing and
//! low-rank adapters.
//!
//! Layers are addressed by 1-based index. Each layer exposes one flat
//! trainable parameter vector: weights then bias for dense layers, the
//! adapter for adapted layers, nothing for activations.

pub mod checkpoint;
mod layer;
mod model;

pub use layer::{Adapter, Dense, Layer, LayerKind, LayerSpec};
pub use model::{
    argmax, build_model, log_sum_exp, loss, softmax, LayerGradMap, LayerSubset, LayeredModel,
};
