//! On-disk model checkpoints.
//!
//! A checkpoint directory holds `checkpoint.json` (config and layer layout),
//! `checkpoint.bin` (backbone parameters, then center-loss centers when
//! present, in the numerics binary format) and `bank.json`/`bank.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{Activation, DenseLayer, MlpBackbone, TrainConfig};
use crate::error::{ensure, Error, Result};
use crate::head::SubCenterBank;
use crate::numerics::Matrix;
use crate::train::{Head, Model};

pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const BANK_STEM: &str = "bank";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: TrainConfig,
    pub input_dim: usize,
    pub classes: usize,
    pub layers: Vec<LayerShape>,
    pub bank_hash: String,
    pub has_centers: bool,
}

pub fn save_checkpoint(model: &Model, config: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layers = model.backbone.layers();
    let meta = CheckpointMeta {
        version: FORMAT_VERSION,
        config: config.clone(),
        input_dim: model.backbone.input_dim(),
        classes: model.classes(),
        layers: layers
            .iter()
            .map(|l| LayerShape {
                inputs: l.inputs(),
                outputs: l.outputs(),
                activation: l.activation,
            })
            .collect(),
        bank_hash: model.head.bank().content_hash(),
        has_centers: matches!(model.head, Head::CenterLoss { .. }),
    };

    let mut bin = Vec::new();
    for l in layers {
        bin.extend(l.weight.to_binary());
        bin.extend(Matrix::new(1, l.bias.len(), l.bias.clone())?.to_binary());
    }
    if let Head::CenterLoss { centers, .. } = &model.head {
        bin.extend(centers.to_binary());
    }

    let json_path = dir.join(CHECKPOINT_JSON);
    let text = serde_json::to_string_pretty(&meta).expect("checkpoint metadata serializes");
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    let bin_path = dir.join(CHECKPOINT_BIN);
    fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
    model.head.bank().save(dir, BANK_STEM)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, TrainConfig)> {
    let json_path = dir.join(CHECKPOINT_JSON);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: json_path.clone(),
        source,
    })?;
    ensure!(
        meta.version == FORMAT_VERSION,
        "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
        meta.version
    );

    let bin_path = dir.join(CHECKPOINT_BIN);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut cursor = bytes.as_slice();
    let mut layers = Vec::with_capacity(meta.layers.len());
    for (i, shape) in meta.layers.iter().enumerate() {
        let weight = Matrix::read_binary(&mut cursor)?;
        let bias = Matrix::read_binary(&mut cursor)?;
        ensure!(
            weight.shape() == (shape.inputs, shape.outputs) && bias.shape() == (1, shape.outputs),
            "layer {i}: stored shapes {:?}/{:?} disagree with metadata",
            weight.shape(),
            bias.shape()
        );
        layers.push(DenseLayer {
            weight,
            bias: bias.as_slice().to_vec(),
            activation: shape.activation,
        });
    }
    let backbone = MlpBackbone::new(layers)?;
    ensure!(
        backbone.input_dim() == meta.input_dim,
        "checkpoint input_dim {} but first layer takes {}",
        meta.input_dim,
        backbone.input_dim()
    );

    let bank = SubCenterBank::load(dir, BANK_STEM)?;
    ensure!(
        bank.content_hash() == meta.bank_hash,
        "bank on disk does not belong to this checkpoint"
    );
    ensure!(
        bank.classes() == meta.classes,
        "bank has {} classes, checkpoint {}",
        bank.classes(),
        meta.classes
    );

    let mut head = Head::build(&meta.config, meta.classes, bank.seed())?;
    *head.bank_mut() = bank;
    match &mut head {
        Head::CenterLoss { centers, .. } => {
            ensure!(
                meta.has_centers,
                "center-loss checkpoint without stored centers"
            );
            let stored = Matrix::read_binary(&mut cursor)?;
            ensure!(
                stored.shape() == centers.shape(),
                "stored centers have shape {:?}",
                stored.shape()
            );
            *centers = stored;
        }
        Head::SubCenter { .. } => ensure!(
            !meta.has_centers,
            "centers stored for a head without centers"
        ),
    }
    ensure!(
        cursor.is_empty(),
        "{} trailing bytes in {}",
        cursor.len(),
        bin_path.display()
    );

    let model = Model {
        backbone,
        head,
        normalize_features: meta.config.normalize_features,
        assignment_rule: meta.config.assignment_rule,
    };
    Ok((model, meta.config))
}
