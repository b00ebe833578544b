use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Cosine-annealed learning rate `½ · lr0 · (1 + cos(π · step / total))`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> Result<f64> {
    ensure!(total >= 1, "cosine schedule needs total >= 1");
    ensure!(
        step <= total,
        "cosine schedule step {step} exceeds total {total}"
    );
    let t = step as f64 / total as f64;
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// SGD with momentum and L2 weight decay on a cosine schedule.
///
/// Per parameter `p` with gradient `g` at step `t`:
/// `g ← g + wd·p; v ← μ·v + g; p ← p − lr_t·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    velocities: Vec<Vec<f64>>,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    current_step: usize,
}

impl OptimizerState {
    pub fn new(lr0: f64, momentum: f64, weight_decay: f64, total_steps: usize) -> Result<Self> {
        ensure!(
            lr0 >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0,
            "optimizer rates must be >= 0"
        );
        ensure!(total_steps >= 1, "optimizer needs total_steps >= 1");
        Ok(Self {
            velocities: Vec::new(),
            lr0,
            momentum,
            weight_decay,
            total_steps,
            current_step: 0,
        })
    }

    pub fn current_step(&self) -> usize {
        self.current_step
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.lr0, self.current_step, self.total_steps)
    }

    /// Applies one update to every parameter slice and returns the learning
    /// rate used. The parameter list must have the same shapes on every call.
    pub fn sgd_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<f64> {
        ensure!(
            params.len() == grads.len(),
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            ensure!(
                p.len() == g.len(),
                "parameter {i} has {} entries, gradient {}",
                p.len(),
                g.len()
            );
        }
        if self.velocities.is_empty() {
            self.velocities = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        ensure!(
            self.velocities.len() == params.len()
                && self
                    .velocities
                    .iter()
                    .zip(params.iter())
                    .all(|(v, p)| v.len() == p.len()),
            "parameter shapes changed between optimizer steps"
        );
        ensure!(
            self.current_step < self.total_steps,
            "optimizer already took all {} scheduled steps",
            self.total_steps
        );
        let lr = self.current_lr()?;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocities.iter_mut()) {
            for ((pk, gk), vk) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                let grad = gk + self.weight_decay * *pk;
                *vk = self.momentum * *vk + grad;
                *pk -= lr * *vk;
            }
        }
        self.current_step += 1;
        Ok(lr)
    }
}
