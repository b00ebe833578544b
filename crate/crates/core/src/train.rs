//! Model assembly, the mini-batch training loop and evaluation.

use serde::{Deserialize, Serialize};

use crate::backbone::{HeadVariant, MlpBackbone, OptimizerState, TrainConfig};
use crate::datagen::LabeledDataset;
use crate::error::{ensure, Result};
use crate::head::{
    head_gradients, AssignmentRule, FeatureBatch, HeadOutput, LossBreakdown, LossOptions,
    SubCenterBank,
};
use crate::metrics::{
    per_class_accuracy, recall_at_k, subclass_variance, top1_accuracy, EvalReport, RECALL_KS,
};
use crate::numerics::{Matrix, RandomStream};

/// Child-stream tags under the run seed.
const BACKBONE_TAG: u64 = 0;
const HEAD_TAG: u64 = 1;
const SHUFFLE_TAG: u64 = 1_000;

/// Classifier on top of the backbone features.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Sub-center softmax; frozen for F-SC, trainable for the baselines.
    SubCenter { bank: SubCenterBank, beta: f64 },
    /// Single-center softmax plus `weight · ½ Σ ‖x − c_y‖²`, with the class
    /// centers `c` moved towards their features at rate `alpha` each batch.
    CenterLoss {
        bank: SubCenterBank,
        centers: Matrix,
        weight: f64,
        alpha: f64,
    },
}

impl Head {
    /// Builds the head for `config.head_variant`. All variants draw their
    /// class centers from the same seed, so runs that differ only in the
    /// head start from the same geometry.
    pub fn build(config: &TrainConfig, classes: usize, seed: u64) -> Result<Head> {
        let d = config.feature_dim;
        Ok(match config.head_variant {
            HeadVariant::Fsc => Head::SubCenter {
                bank: SubCenterBank::generate(classes, config.s, d, config.sigma2, seed, true)?,
                beta: config.beta,
            },
            HeadVariant::TrainableSubcenter => Head::SubCenter {
                bank: SubCenterBank::generate(classes, config.s, d, config.sigma2, seed, false)?,
                beta: config.beta,
            },
            HeadVariant::Softmax => Head::SubCenter {
                bank: SubCenterBank::generate(classes, 1, d, 0.0, seed, false)?,
                beta: 0.0,
            },
            HeadVariant::CenterLoss => Head::CenterLoss {
                bank: SubCenterBank::generate(classes, 1, d, 0.0, seed, false)?,
                centers: Matrix::zeros(classes, d),
                weight: config.beta,
                alpha: config.center_alpha,
            },
        })
    }

    pub fn bank(&self) -> &SubCenterBank {
        match self {
            Head::SubCenter { bank, .. } | Head::CenterLoss { bank, .. } => bank,
        }
    }

    pub fn bank_mut(&mut self) -> &mut SubCenterBank {
        match self {
            Head::SubCenter { bank, .. } | Head::CenterLoss { bank, .. } => bank,
        }
    }
}

/// Result of running the head on one batch of features.
#[derive(Debug, Clone)]
pub struct HeadPass {
    /// Features the head saw.
    pub features: Matrix,
    pub loss: LossBreakdown,
    pub output: HeadOutput,
    pub assignment: Vec<usize>,
    pub grad_features: Matrix,
    pub grad_weights: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: MlpBackbone,
    pub head: Head,
    pub normalize_features: bool,
    pub assignment_rule: AssignmentRule,
}

/// One optimizer step's losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub cross_entropy: f64,
    pub compactness: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub batches: Vec<BatchRecord>,
    /// Sample-weighted mean of the per-batch cross-entropies.
    pub mean_cross_entropy: f64,
    /// Sum of per-batch compactness losses.
    pub compactness_sum: f64,
}

fn l2_normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        norms.push(norm);
    }
    (out, norms)
}

/// Pulls `∂L/∂x̂` back through `x̂ = x / ‖x‖`.
fn normalize_backward(unit: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (r, &norm) in norms.iter().enumerate() {
        let u = unit.row(r);
        let g = out.row_mut(r);
        if norm == 0.0 {
            g.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let proj: f64 = u.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gv, uv) in g.iter_mut().zip(u) {
            *gv = (*gv - uv * proj) / norm;
        }
    }
    out
}

impl Model {
    pub fn new(config: &TrainConfig, input_dim: usize, classes: usize) -> Result<Model> {
        config.validate()?;
        ensure!(classes >= 1, "need at least one class");
        let root = RandomStream::new(config.seed);
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(config.feature_dim);
        let backbone = MlpBackbone::init(&dims, &mut root.derive(BACKBONE_TAG))?;
        let head = Head::build(config, classes, root.child_seed(HEAD_TAG))?;
        Ok(Model {
            backbone,
            head,
            normalize_features: config.normalize_features,
            assignment_rule: config.assignment_rule,
        })
    }

    pub fn classes(&self) -> usize {
        self.head.bank().classes()
    }

    /// Head-space features for `inputs`, without caching.
    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        let raw = self.backbone.infer(inputs)?;
        Ok(if self.normalize_features {
            l2_normalize_rows(&raw).0
        } else {
            raw
        })
    }

    /// Loss, outputs and gradients of the head for given features.
    pub fn head_pass(
        &self,
        features: Matrix,
        labels: &[usize],
        weight_grad: bool,
    ) -> Result<HeadPass> {
        let batch = FeatureBatch::new(features, labels.to_vec())?;
        match &self.head {
            Head::SubCenter { bank, beta } => {
                let opts = LossOptions {
                    beta: *beta,
                    rule: self.assignment_rule,
                };
                let g = head_gradients(bank, &batch, opts, weight_grad && !bank.is_frozen())?;
                Ok(HeadPass {
                    features: batch.x,
                    loss: g.loss,
                    output: g.output,
                    assignment: g.assignment,
                    grad_features: g.features,
                    grad_weights: g.weights,
                })
            }
            Head::CenterLoss {
                bank,
                centers,
                weight,
                ..
            } => {
                let opts = LossOptions {
                    beta: 0.0,
                    rule: self.assignment_rule,
                };
                let g = head_gradients(bank, &batch, opts, weight_grad)?;
                let mut grad_features = g.features;
                let mut compact = 0.0;
                for (i, &y) in batch.y.iter().enumerate() {
                    let c = centers.row(y);
                    let x = batch.x.row(i);
                    compact += x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    for ((gv, a), b) in grad_features.row_mut(i).iter_mut().zip(x).zip(c) {
                        *gv += weight * (a - b);
                    }
                }
                compact *= 0.5;
                Ok(HeadPass {
                    features: batch.x,
                    loss: LossBreakdown::new(g.loss.cross_entropy, compact, *weight),
                    output: g.output,
                    assignment: g.assignment,
                    grad_features,
                    grad_weights: g.weights,
                })
            }
        }
    }

    /// Total loss of the composite model on one batch. Gradient-check hook.
    pub fn loss(&self, inputs: &Matrix, labels: &[usize]) -> Result<LossBreakdown> {
        Ok(self.head_pass(self.features(inputs)?, labels, false)?.loss)
    }

    /// Forward and backward through head and backbone. Returns the head pass
    /// and the backbone parameter gradients; nothing is updated.
    pub fn gradients(
        &mut self,
        inputs: &Matrix,
        labels: &[usize],
    ) -> Result<(HeadPass, crate::backbone::MlpGrads)> {
        let raw = self.backbone.forward(inputs)?;
        let (feats, norms) = if self.normalize_features {
            let (u, n) = l2_normalize_rows(&raw);
            (u, Some(n))
        } else {
            (raw, None)
        };
        let pass = self.head_pass(feats, labels, true)?;
        let upstream = match &norms {
            Some(n) => normalize_backward(&pass.features, n, &pass.grad_features),
            None => pass.grad_features.clone(),
        };
        let grads = self.backbone.backward(&upstream)?;
        Ok((pass, grads))
    }

    /// One optimizer step on a mini-batch.
    pub fn step(
        &mut self,
        inputs: &Matrix,
        labels: &[usize],
        opt: &mut OptimizerState,
    ) -> Result<(LossBreakdown, f64)> {
        let (pass, grads) = self.gradients(inputs, labels)?;
        let Model { backbone, head, .. } = self;
        let mut params = backbone.params_mut();
        let mut grad_slices = grads.slices();
        let trainable_head = !head.bank().is_frozen();
        if trainable_head {
            let gw = pass
                .grad_weights
                .as_ref()
                .expect("trainable head always gets a weight gradient");
            grad_slices.push(gw.as_slice());
            params.push(head.bank_mut().weights_mut()?.as_mut_slice());
        }
        let lr = opt.sgd_step(&mut params, &grad_slices)?;

        if let Head::CenterLoss { centers, alpha, .. } = head {
            // Centers move towards the features seen before the update.
            update_centers(centers, &pass.features, labels, *alpha);
        }
        Ok((pass.loss, lr))
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let feats = self.features(inputs)?;
        let labels = vec![0; feats.rows()];
        Ok(self.head_pass(feats, &labels, false)?.output.predictions())
    }

    pub fn evaluate(&self, data: &LabeledDataset) -> Result<EvalReport> {
        ensure!(!data.is_empty(), "cannot evaluate on an empty dataset");
        let feats = self.features(&data.inputs)?;
        let pass = self.head_pass(feats, &data.labels, false)?;
        let feats = &pass.features;
        let predictions = pass.output.predictions();
        let ks: Vec<usize> = RECALL_KS
            .iter()
            .copied()
            .filter(|&k| k < data.len())
            .collect();
        let recall_at = if data.len() >= 2 {
            recall_at_k(feats, &data.labels, &ks)?
        } else {
            Default::default()
        };
        let bank = self.head.bank();
        Ok(EvalReport {
            top1: top1_accuracy(&predictions, &data.labels)?,
            recall_at,
            dispersion: if bank.subcenters_per_class() >= 2 {
                Some(bank.dispersion_stats()?)
            } else {
                None
            },
            per_class_accuracy: per_class_accuracy(&predictions, &data.labels, self.classes())?,
            subclass_variance: subclass_variance(feats, &data.labels, &pass.assignment)?,
            loss: pass.loss,
            samples: data.len(),
        })
    }
}

/// Center-loss update: `c_j ← c_j − α Σ_{i: y_i=j} (c_j − x_i) / (1 + n_j)`.
fn update_centers(centers: &mut Matrix, features: &Matrix, labels: &[usize], alpha: f64) {
    let (c, d) = centers.shape();
    let mut delta = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let cy: Vec<f64> = centers.row(y).to_vec();
        for ((dv, cv), xv) in delta.row_mut(y).iter_mut().zip(&cy).zip(features.row(i)) {
            *dv += cv - xv;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        let scale = alpha / (1.0 + count as f64);
        let dj: Vec<f64> = delta.row(j).to_vec();
        for (cv, dv) in centers.row_mut(j).iter_mut().zip(dj) {
            *cv -= scale * dv;
        }
    }
}

/// Number of mini-batches per epoch.
pub fn batches_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// Optimizer sized for the whole run.
pub fn optimizer_for(config: &TrainConfig, samples: usize) -> Result<OptimizerState> {
    let steps = config.epochs * batches_per_epoch(samples, config.batch_size);
    OptimizerState::new(
        config.lr0,
        config.momentum,
        config.weight_decay,
        steps.max(1),
    )
}

/// Visiting order of the samples in `epoch`, from the run seed.
pub fn epoch_order(seed: u64, epoch: usize, samples: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    RandomStream::new(seed)
        .derive(SHUFFLE_TAG + epoch as u64)
        .shuffle(&mut order);
    order
}

/// One pass over `data` in seeded random order.
pub fn train_epoch(
    model: &mut Model,
    data: &LabeledDataset,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<EpochRecord> {
    ensure!(!data.is_empty(), "cannot train on an empty dataset");
    ensure!(
        data.dim() == model.backbone.input_dim(),
        "dataset has {} features but the backbone expects {}",
        data.dim(),
        model.backbone.input_dim()
    );
    let order = epoch_order(config.seed, epoch, data.len());
    let mut batches = Vec::with_capacity(batches_per_epoch(data.len(), config.batch_size));
    let mut ce_weighted = 0.0;
    let mut compact_sum = 0.0;
    for (b, idx) in order.chunks(config.batch_size).enumerate() {
        let x = data.inputs.select_rows(idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let (loss, lr) = model.step(&x, &y, opt)?;
        ce_weighted += loss.cross_entropy * idx.len() as f64;
        compact_sum += loss.compactness;
        batches.push(BatchRecord {
            epoch,
            batch: b,
            cross_entropy: loss.cross_entropy,
            compactness: loss.compactness,
            total: loss.total,
            lr,
        });
    }
    Ok(EpochRecord {
        batches,
        mean_cross_entropy: ce_weighted / data.len() as f64,
        compactness_sum: compact_sum,
    })
}

/// Builds a model and trains it for `config.epochs` epochs.
pub fn fit(config: &TrainConfig, train: &LabeledDataset) -> Result<(Model, Vec<BatchRecord>)> {
    let mut model = Model::new(config, train.dim(), train.classes)?;
    let mut opt = optimizer_for(config, train.len())?;
    let mut records = Vec::new();
    for epoch in 0..config.epochs {
        records.extend(train_epoch(&mut model, train, config, &mut opt, epoch)?.batches);
    }
    Ok((model, records))
}
