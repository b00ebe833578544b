use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::head::AssignmentRule;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// Frozen sampled sub-centers; `beta` weights the compactness term.
    #[default]
    Fsc,
    /// One trainable center per class, plain softmax cross-entropy.
    Softmax,
    /// Softmax plus the center loss with moving-average class centers.
    CenterLoss,
    /// Sampled sub-centers that stay trainable; `beta` as for `Fsc`.
    TrainableSubcenter,
}

impl HeadVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadVariant::Fsc => "fsc",
            HeadVariant::Softmax => "softmax",
            HeadVariant::CenterLoss => "center_loss",
            HeadVariant::TrainableSubcenter => "trainable_subcenter",
        }
    }
}

impl std::str::FromStr for HeadVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "fsc" => Ok(HeadVariant::Fsc),
            "softmax" => Ok(HeadVariant::Softmax),
            "center_loss" => Ok(HeadVariant::CenterLoss),
            "trainable_subcenter" | "subcenter_trainable" => Ok(HeadVariant::TrainableSubcenter),
            other => Err(format!(
                "unknown head '{other}' (expected fsc, softmax, center-loss or trainable-subcenter)"
            )),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sub-centers per class.
    pub s: usize,
    /// Variance of the sub-center sampling distribution.
    pub sigma2: f64,
    /// Compactness (or center-loss) weight.
    pub beta: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub head_variant: HeadVariant,
    pub assignment_rule: AssignmentRule,
    pub normalize_features: bool,
    /// Hidden layer widths of the backbone.
    pub hidden: Vec<usize>,
    /// Output width of the backbone, i.e. the head's feature dimension.
    pub feature_dim: usize,
    /// Center update rate for the center-loss baseline.
    pub center_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            s: 4,
            sigma2: 1e-3,
            beta: 1e-4,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 50,
            batch_size: 64,
            seed: 1,
            head_variant: HeadVariant::Fsc,
            assignment_rule: AssignmentRule::ArgmaxLogit,
            normalize_features: false,
            hidden: vec![64, 64],
            feature_dim: 16,
            center_alpha: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.s >= 1, "s must be >= 1");
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(self.feature_dim >= 1, "feature_dim must be >= 1");
        ensure!(
            self.hidden.iter().all(|&h| h >= 1),
            "hidden widths must be >= 1"
        );
        for (name, v) in [
            ("sigma2", self.sigma2),
            ("beta", self.beta),
            ("lr0", self.lr0),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("center_alpha", self.center_alpha),
        ] {
            ensure!(
                v.is_finite() && v >= 0.0,
                "{name} must be finite and >= 0, got {v}"
            );
        }
        Ok(())
    }
}
