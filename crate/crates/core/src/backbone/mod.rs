//! Trainable feature extractor, optimizer and run configuration.

mod config;
mod mlp;
mod optim;

pub use config::{HeadVariant, TrainConfig};
pub use mlp::{Activation, DenseLayer, LayerGrads, MlpBackbone, MlpGrads};
pub use optim::{cosine_lr, OptimizerState};
