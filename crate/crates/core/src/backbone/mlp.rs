use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{sample_uniform, Matrix, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `act(input · weight + bias)`, with `weight` stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn affine(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&self.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

fn activate(z: &Matrix, act: Activation) -> Matrix {
    match act {
        Activation::Identity => z.clone(),
        Activation::Relu => {
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardCache {
    /// Input of each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

/// Gradient of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl MlpGrads {
    /// Flattened in the same order as [`MlpBackbone::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// Feed-forward feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBackbone {
    layers: Vec<DenseLayer>,
    cache: Option<ForwardCache>,
}

impl MlpBackbone {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        ensure!(!layers.is_empty(), "an MLP needs at least one layer");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.bias.len() == l.outputs(),
                "layer {i}: bias length {} does not match {} outputs",
                l.bias.len(),
                l.outputs()
            );
            ensure!(
                l.bias.iter().all(|b| b.is_finite()),
                "layer {i}: non-finite bias"
            );
        }
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].outputs() == pair[1].inputs(),
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].outputs(),
                i + 1,
                pair[1].inputs()
            );
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// ReLU hidden layers and an identity output layer over `dims`
    /// (`[input, hidden.., output]`). Weights are kaiming-uniform with bound
    /// `sqrt(6 / fan_in)`; biases start at zero.
    pub fn init(dims: &[usize], stream: &mut RandomStream) -> Result<Self> {
        ensure!(
            dims.len() >= 2,
            "need at least input and output dims, got {dims:?}"
        );
        ensure!(
            dims.iter().all(|&d| d >= 1),
            "all layer widths must be >= 1, got {dims:?}"
        );
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Ok(DenseLayer {
                    weight: Matrix::new(
                        w[0],
                        w[1],
                        sample_uniform(stream, -bound, bound, w[0] * w[1])?,
                    )?,
                    bias: vec![0.0; w[1]],
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        ensure!(
            input.cols() == self.input_dim(),
            "MLP expects {} input columns, got {}",
            self.input_dim(),
            input.cols()
        );
        Ok(())
    }

    /// Forward pass that caches activations for [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        for layer in &self.layers {
            let z = layer.affine(&a)?;
            let next = activate(&z, layer.activation);
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        self.cache = Some(ForwardCache { inputs, pre });
        Ok(a)
    }

    /// Forward pass without touching the cache.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut a = input.clone();
        for layer in &self.layers {
            a = activate(&layer.affine(&a)?, layer.activation);
        }
        Ok(a)
    }

    /// Reverse-mode gradients for the batch seen by the last `forward`.
    pub fn backward(&self, grad_output: &Matrix) -> Result<MlpGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::contract("MLP backward called without a cached forward pass"))?;
        let n = cache.inputs[0].rows();
        ensure!(
            grad_output.shape() == (n, self.output_dim()),
            "grad_output shape {:?} does not match cached output {}x{}",
            grad_output.shape(),
            n,
            self.output_dim()
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                let z = &cache.pre[idx];
                for (g, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let weight = cache.inputs[idx].transpose_matmul(&delta)?;
            let mut bias = vec![0.0; layer.outputs()];
            for row in delta.row_iter() {
                for (b, g) in bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let next = delta.matmul_transposed(&layer.weight)?;
            grads.push(LayerGrads { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok(MlpGrads {
            layers: grads,
            input: delta,
        })
    }

    /// Mutable parameter slices: weight then bias, layer by layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}
