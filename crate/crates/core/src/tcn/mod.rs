//! Causal temporal convolutional classifier with an embedding head.
//!
//! Each residual block is a single causal dilated convolution followed by
//! swish, added to the block input (through a 1x1 projection where the
//! channel count changes). The final hidden state feeds an embedding layer
//! and a linear classifier evaluated at every timestep.

mod checkpoint;
mod loss;
mod net;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorize::FRAME_FEATURES;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{cross_entropy, softmax_row};
pub use net::{backward, causal_dilated_conv, forward, forward_batch, infer_batch, Cache, ForwardOutput, Inference};
pub use params::{Block, TcnParameters};
pub use train::{
    class_weights, evaluate, macro_f1, prepare, train, train_with, Adam, EpochRecord, Metrics, Prepared, TrainHyper, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TcnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cache does not match parameters: {0}")]
    CacheMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnConfig {
    pub in_features: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub embed_dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            in_features: FRAME_FEATURES,
            filters: 128,
            kernel: 2,
            dilations: vec![1, 2, 4, 8, 16, 32, 64],
            embed_dim: 256,
            classes: 3,
            seed: 42,
        }
    }
}

impl TcnConfig {
    pub fn with_classes(classes: usize) -> Self {
        TcnConfig { classes, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TcnError> {
        let bad = |m: String| Err(TcnError::InvalidConfig(m));
        if self.in_features == 0 || self.filters == 0 {
            return bad("in_features and filters must be positive".into());
        }
        if self.kernel == 0 {
            return bad("kernel must be at least 1".into());
        }
        if self.dilations.is_empty() || self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("dilations must be positive and strictly increasing, got {:?}", self.dilations));
        }
        if ![256, 1024].contains(&self.embed_dim) {
            return bad(format!("embed_dim must be 256 or 1024, got {}", self.embed_dim));
        }
        if ![2, 3].contains(&self.classes) {
            return bad(format!("classes must be 2 or 3, got {}", self.classes));
        }
        Ok(())
    }

    /// Frames that can influence one output: `1 + (k - 1) * sum(d)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(-1.0) + 0.268_941_421_369_995).abs() < 1e-12);
        assert!((swish(10.0) - 9.999_546_021_312_976).abs() < 1e-12);
        assert!(swish(-800.0).abs() < 1e-300 && swish(800.0) == 800.0);
    }

    #[test]
    fn swish_grad_matches_difference() {
        for &x in &[-6.0, -1.3, -0.2, 0.0, 0.4, 2.2, 7.5] {
            let h = 1e-6;
            let fd = (swish(x + h) - swish(x - h)) / (2.0 * h);
            assert!((fd - swish_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn config_validation() {
        TcnConfig::default().validate().unwrap();
        assert_eq!(TcnConfig::default().receptive_field(), 128);
        for bad in [
            TcnConfig { kernel: 0, ..Default::default() },
            TcnConfig { dilations: vec![1, 1, 2], ..Default::default() },
            TcnConfig { dilations: vec![], ..Default::default() },
            TcnConfig { embed_dim: 100, ..Default::default() },
            TcnConfig { classes: 4, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TcnError::InvalidConfig(_))));
        }
    }
}
