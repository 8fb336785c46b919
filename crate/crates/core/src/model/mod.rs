//! Encoder/decoder model: parameters, backends and the forward pass.

pub mod backend;
pub mod forward;
pub mod params;

pub use backend::{Backend, Eval, Tape, Var};
pub use forward::{forward, forward_with, ForwardOptions, ForwardTrace, ForwardVars, Partitions};
pub use params::{init_params, Activation, ModelDims, ModelParams, TdgcLayerParams};
