//! Fixed sub-center (F-SC) classification: a frozen bank of randomly sampled
//! per-class sub-centers, the sub-center softmax cross-entropy with an
//! intra-subclass compactness penalty, a small MLP backbone trained with
//! SGD, synthetic multi-modal data, and evaluation metrics.

pub mod backbone;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod head;
pub mod metrics;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Matrix, RandomStream};
