//! Multilayer perceptrons for ensemble members and prior feature projectors.

mod checkpoint;
mod ensemble;
mod mlp;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use ensemble::{ensemble_forward, BoundEnsemble, EnsembleWeights, Trunk};
pub use mlp::{
    draw_layers, features, forward, forward_features, forward_tape, init_mlp, Activation, Layer,
    LayerVars, MlpSpec, MlpWeights,
};
