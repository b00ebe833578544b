use serde::{Deserialize, Serialize};

use super::SubCenterBank;
use crate::error::{ensure, Error, Result};
use crate::numerics::reduce::logsumexp_unchecked;
use crate::numerics::Matrix;

/// Feature vectors (one per row) with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        ensure!(
            x.rows() == y.len(),
            "feature batch has {} rows but {} labels",
            x.rows(),
            y.len()
        );
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// How the sub-center `k_i` used by the compactness term is chosen among the
/// true class's sub-centers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentRule {
    /// Largest logit `ŵ_{y,m}ᵀ x` (ties to the smallest `m`).
    #[default]
    ArgmaxLogit,
    /// Smallest Euclidean distance `‖x − ŵ_{y,m}‖` (ties to the smallest `m`).
    NearestEuclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `x · wᵀ`, shape `n × (c·s)`.
    pub logits: Matrix,
    /// Softmax over all `c·s` logits of each row.
    pub subclass_probs: Matrix,
    /// Per-class sums of `subclass_probs`, shape `n × c`.
    pub class_probs: Matrix,
    /// Argmax-logit sub-center index within the true class, per sample.
    pub assignment: Vec<usize>,
    lse_all: Vec<f64>,
}

impl HeadOutput {
    /// Predicted class per sample: argmax of `class_probs`, ties to the lower class.
    pub fn predictions(&self) -> Vec<usize> {
        self.class_probs.row_iter().map(argmax).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub compactness: f64,
    pub total: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub(crate) fn new(cross_entropy: f64, compactness: f64, beta: f64) -> Self {
        Self {
            cross_entropy,
            compactness,
            total: cross_entropy + beta * compactness,
            beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub beta: f64,
    pub rule: AssignmentRule,
}

impl LossOptions {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            rule: AssignmentRule::ArgmaxLogit,
        }
    }
}

/// Everything one training step needs from the head.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub output: HeadOutput,
    /// The sub-center indices used by the compactness term.
    pub assignment: Vec<usize>,
    pub loss: LossBreakdown,
    /// `∂L/∂x`, shape `n × d`.
    pub features: Matrix,
    /// `∂L/∂w`, shape `(c·s) × d`, only when requested.
    pub weights: Option<Matrix>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_batch(bank: &SubCenterBank, batch: &FeatureBatch) -> Result<()> {
    ensure!(
        batch.x.cols() == bank.dim(),
        "feature dimension {} does not match bank dimension {}",
        batch.x.cols(),
        bank.dim()
    );
    ensure!(
        batch.x.rows() == batch.y.len(),
        "batch rows and labels disagree"
    );
    if let Some(&bad) = batch.y.iter().find(|&&y| y >= bank.classes()) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {} classes",
            bank.classes()
        )));
    }
    Ok(())
}

/// Sub-center logits, sub-class and class probabilities, and the argmax-logit
/// assignment.
pub fn forward(bank: &SubCenterBank, batch: &FeatureBatch) -> Result<HeadOutput> {
    check_batch(bank, batch)?;
    let (c, s) = (bank.classes(), bank.subcenters_per_class());
    let logits = batch.x.matmul_transposed(bank.weights())?;
    let n = batch.len();
    let mut probs = Matrix::zeros(n, c * s);
    let mut class_probs = Matrix::zeros(n, c);
    let mut assignment = Vec::with_capacity(n);
    let mut lse_all = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i);
        let lse = logsumexp_unchecked(row);
        lse_all.push(lse);
        let prow = probs.row_mut(i);
        for (p, z) in prow.iter_mut().zip(row) {
            *p = (z - lse).exp();
        }
        let crow = class_probs.row_mut(i);
        for (j, cp) in crow.iter_mut().enumerate() {
            *cp = prow[j * s..(j + 1) * s].iter().sum();
        }
        let y = batch.y[i];
        assignment.push(argmax(&row[y * s..(y + 1) * s]));
    }
    Ok(HeadOutput {
        logits,
        subclass_probs: probs,
        class_probs,
        assignment,
        lse_all,
    })
}

/// Assignment under `rule`; reuses the forward pass for the argmax rule.
pub fn assign(
    bank: &SubCenterBank,
    batch: &FeatureBatch,
    output: &HeadOutput,
    rule: AssignmentRule,
) -> Vec<usize> {
    match rule {
        AssignmentRule::ArgmaxLogit => output.assignment.clone(),
        AssignmentRule::NearestEuclidean => {
            let s = bank.subcenters_per_class();
            (0..batch.len())
                .map(|i| {
                    let x = batch.x.row(i);
                    let neg_dist: Vec<f64> = (0..s)
                        .map(|m| {
                            let w = bank.subcenter(batch.y[i], m);
                            -x.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                        })
                        .collect();
                    argmax(&neg_dist)
                })
                .collect()
        }
    }
}

/// `½ Σ_i ‖x_i − ŵ_{y_i, k_i}‖²` summed over the batch.
pub fn compactness_loss(
    bank: &SubCenterBank,
    batch: &FeatureBatch,
    assignment: &[usize],
) -> Result<f64> {
    check_batch(bank, batch)?;
    ensure!(
        assignment.len() == batch.len(),
        "assignment has {} entries for a batch of {}",
        assignment.len(),
        batch.len()
    );
    let s = bank.subcenters_per_class();
    let mut total = 0.0;
    for (i, &k) in assignment.iter().enumerate() {
        ensure!(k < s, "assignment {k} out of range for s={s}");
        let w = bank.subcenter(batch.y[i], k);
        total += batch
            .x
            .row(i)
            .iter()
            .zip(w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(0.5 * total)
}

fn cross_entropy(output: &HeadOutput, batch: &FeatureBatch, s: usize) -> f64 {
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let y = batch.y[i];
        let true_lse = logsumexp_unchecked(&output.logits.row(i)[y * s..(y + 1) * s]);
        total += output.lse_all[i] - true_lse;
    }
    total / n as f64
}

/// Sub-center cross-entropy plus `beta` times the compactness loss, with the
/// argmax-logit assignment.
pub fn fsc_loss(bank: &SubCenterBank, batch: &FeatureBatch, beta: f64) -> Result<LossBreakdown> {
    fsc_loss_with(bank, batch, LossOptions::new(beta))
}

pub fn fsc_loss_with(
    bank: &SubCenterBank,
    batch: &FeatureBatch,
    opts: LossOptions,
) -> Result<LossBreakdown> {
    ensure!(opts.beta >= 0.0, "beta must be >= 0, got {}", opts.beta);
    ensure!(!batch.is_empty(), "loss of an empty batch");
    let output = forward(bank, batch)?;
    let assignment = assign(bank, batch, &output, opts.rule);
    let compact = compactness_loss(bank, batch, &assignment)?;
    let ce = cross_entropy(&output, batch, bank.subcenters_per_class());
    Ok(LossBreakdown::new(ce, compact, opts.beta))
}

/// `∂L/∂x` of the total loss. The sub-centers are constants and the
/// assignment is held fixed.
pub fn loss_grad_features(bank: &SubCenterBank, batch: &FeatureBatch, beta: f64) -> Result<Matrix> {
    Ok(head_gradients(bank, batch, LossOptions::new(beta), false)?.features)
}

/// Loss, feature gradient and (when `with_weights`) the weight gradient.
///
/// With `G[i, (j,m)] = (P̃[i,(j,m)] − [j = y_i]·q[i,m]) / n`, where `q[i,·]`
/// is the softmax over the true class's logits only:
///
/// - `∂L/∂x = G·w + β (x_i − w_{y_i,k_i})`
/// - `∂L/∂w = Gᵀ·x + β Σ_{i assigned to (j,m)} (w_{j,m} − x_i)`
pub fn head_gradients(
    bank: &SubCenterBank,
    batch: &FeatureBatch,
    opts: LossOptions,
    with_weights: bool,
) -> Result<HeadGradients> {
    ensure!(opts.beta >= 0.0, "beta must be >= 0, got {}", opts.beta);
    ensure!(!batch.is_empty(), "gradient of an empty batch");
    let output = forward(bank, batch)?;
    let assignment = assign(bank, batch, &output, opts.rule);
    let compact = compactness_loss(bank, batch, &assignment)?;
    let s = bank.subcenters_per_class();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let mut coef = output.subclass_probs.clone();
    let mut ce = 0.0;
    for i in 0..n {
        let y = batch.y[i];
        let true_logits = &output.logits.row(i)[y * s..(y + 1) * s];
        let true_lse = logsumexp_unchecked(true_logits);
        ce += output.lse_all[i] - true_lse;
        let row = coef.row_mut(i);
        for (m, z) in true_logits.iter().enumerate() {
            row[y * s + m] -= (z - true_lse).exp();
        }
        row.iter_mut().for_each(|g| *g *= inv_n);
    }
    let loss = LossBreakdown::new(ce * inv_n, compact, opts.beta);

    let mut features = coef.matmul(bank.weights())?;
    let mut weights = if with_weights {
        Some(coef.transpose_matmul(&batch.x)?)
    } else {
        None
    };
    if opts.beta != 0.0 {
        for (i, &k) in assignment.iter().enumerate() {
            let r = batch.y[i] * s + k;
            let w = bank.weights().row(r);
            let x = batch.x.row(i);
            for ((g, a), b) in features.row_mut(i).iter_mut().zip(x).zip(w) {
                *g += opts.beta * (a - b);
            }
            if let Some(gw) = weights.as_mut() {
                for ((g, a), b) in gw.row_mut(r).iter_mut().zip(x).zip(w) {
                    *g += opts.beta * (b - a);
                }
            }
        }
    }
    Ok(HeadGradients {
        output,
        assignment,
        loss,
        features,
        weights,
    })
}
