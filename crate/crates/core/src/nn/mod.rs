//! Minimal dense network stack: matrices, MLPs with LayerNorm and inverted
//! dropout, exact reverse-mode gradients, Adam, and named random streams.

mod adam;
mod layer_norm;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use layer_norm::{layer_norm, DEFAULT_EPS as LAYER_NORM_EPS};
pub use matrix::Matrix;
pub use mlp::{
    Activation, Dense, DenseGrads, Gradients, HiddenRegularization, LayerNormParams, MlpGrads,
    MlpParams, Mode, Tape,
};
pub use rng::RngStream;
