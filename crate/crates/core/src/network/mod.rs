//! Differentiable point-cloud networks.

mod checkpoint;
mod layers;
mod model;
mod params;
mod tnet;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use layers::{max_pool_backward, max_pool_global, Dense, EdgeCache, EdgeConv, KnnLists};
pub use model::{
    ArchKind, ForwardTrace, HookPoint, KnnGraphs, LayerKind, LayerSpec, Mixer, Model, ModelConfig,
    Task, TnetPosition,
};
pub use params::{Gradients, ModelParams, ParamId, TensorMeta};
pub use tnet::{tnet_regularizer, tnet_regularizer_grad, TNet, TnetTrace};
