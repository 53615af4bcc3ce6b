//! AdamW and SGD with momentum and a step learning-rate schedule.
//!
//! Optimizer state is kept in 64-bit; parameters stay 32-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Adamw {
        lr: f64,
        betas: [f64; 2],
        weight_decay: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
        momentum: f64,
        step_epochs: usize,
        gamma: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl OptimizerSpec {
    pub fn adamw(lr: f64) -> Self {
        OptimizerSpec::Adamw {
            lr,
            betas: [0.9, 0.999],
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd {
            lr,
            momentum: 0.9,
            step_epochs: 12,
            gamma: 0.1,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match *self {
            OptimizerSpec::Adamw { lr, betas, weight_decay, eps } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad("lr must be positive");
                }
                if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
                    return bad("betas must lie in [0,1)");
                }
                if !(weight_decay >= 0.0) || !(eps > 0.0) {
                    return bad("weight_decay must be >= 0 and eps > 0");
                }
            }
            OptimizerSpec::Sgd { lr, momentum, step_epochs, gamma, weight_decay } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad("lr must be positive");
                }
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum must lie in [0,1)");
                }
                if step_epochs == 0 {
                    return bad("step_epochs must be positive");
                }
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return bad("gamma must lie in (0,1]");
                }
                if !(weight_decay >= 0.0) {
                    return bad("weight_decay must be >= 0");
                }
            }
        }
        Ok(())
    }

    /// Learning rate during 0-based `epoch`. AdamW runs at a constant rate.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match *self {
            OptimizerSpec::Adamw { lr, .. } => lr,
            OptimizerSpec::Sgd { lr, step_epochs, gamma, .. } => lr * gamma.powi((epoch / step_epochs) as i32),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn state_is_finite(&self) -> bool {
        self.first.iter().chain(&self.second).flatten().all(|v| v.is_finite())
    }

    /// One update of `params` with `grads` at learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.spec, OptimizerSpec::Adamw { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            match self.spec {
                OptimizerSpec::Adamw { betas: [b1, b2], weight_decay, eps, .. } => {
                    let c1 = 1.0 - b1.powi(self.steps as i32);
                    let c2 = 1.0 - b2.powi(self.steps as i32);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gj = gj as f64;
                        let mut x = *w as f64 * (1.0 - lr * weight_decay);
                        m[j] = b1 * m[j] + (1.0 - b1) * gj;
                        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                        x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        *w = x as f32;
                    }
                }
                OptimizerSpec::Sgd { momentum, weight_decay, .. } => {
                    let buf = &mut self.first[i];
                    let fresh = self.steps == 1;
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gj = gj as f64 + weight_decay * *w as f64;
                        buf[j] = if fresh { gj } else { momentum * buf[j] + gj };
                        *w = (*w as f64 - lr * buf[j]) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
