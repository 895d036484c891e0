//! SGD with momentum and weight decay, and the warm-up plus step-decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{CkdError, Result};
use crate::model::{ModelParams, ParamGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied once per decay interval after warm-up (0.9 = "decay by 10%").
    pub lr_decay_factor: f64,
    pub lr_decay_interval_epochs: usize,
    /// Epochs at the base learning rate before decay starts.
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    /// Desk-scale distillation schedule: 60 epochs, batch 32, warm-up 20, decay every 10.
    pub fn desk() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.9,
            lr_decay_interval_epochs: 10,
            warmup_epochs: 20,
            total_epochs: 60,
            batch_size: 32,
            seed: 0,
        }
    }

    /// Desk-scale mentor pretraining: 300 epochs at a higher rate and no weight
    /// decay, so that small mentors fit multimodal toy data closely.
    pub fn desk_pretrain() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_decay_factor: 0.9,
            lr_decay_interval_epochs: 10,
            warmup_epochs: 150,
            total_epochs: 300,
            batch_size: 32,
            seed: 0,
        }
    }

    /// The full-length CIFAR-100 schedule: 240 epochs, batch 64, warm-up 120, decay every 30.
    pub fn cifar() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.9,
            lr_decay_interval_epochs: 30,
            warmup_epochs: 120,
            total_epochs: 240,
            batch_size: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CkdError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CkdError::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.momentum >= 1.0 {
            return Err(CkdError::invalid(format!(
                "momentum must be below 1, got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(CkdError::invalid("batch_size must be at least 1"));
        }
        if self.lr_decay_interval_epochs == 0 {
            return Err(CkdError::invalid("lr_decay_interval_epochs must be at least 1"));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(CkdError::invalid(format!(
                "warmup_epochs ({}) exceeds total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Base rate during warm-up, then `base * factor^(floor((epoch - warmup) / interval) + 1)`.
pub fn lr_at(epoch: usize, config: &OptimizerConfig) -> f64 {
    if epoch < config.warmup_epochs {
        return config.learning_rate;
    }
    let steps = (epoch - config.warmup_epochs) / config.lr_decay_interval_epochs + 1;
    config.learning_rate * config.lr_decay_factor.powi(steps as i32)
}

/// Momentum buffers for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: ParamGrads,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(SgdState {
            velocity: ModelParams::zeros(params.spec())?,
        })
    }

    pub fn velocity(&self) -> &ParamGrads {
        &self.velocity
    }
}

/// Where an optimizer step happens, for error reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepContext {
    pub epoch: usize,
    pub batch: usize,
}

/// `v <- momentum * v + g + weight_decay * theta; theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut SgdState,
    lr: f64,
    config: &OptimizerConfig,
    ctx: StepContext,
) -> Result<()> {
    if params.spec() != grads.spec() || params.spec() != state.velocity.spec() {
        return Err(CkdError::ShapeMismatch {
            context: "sgd_step",
            expected: params.spec().to_string(),
            actual: grads.spec().to_string(),
        });
    }
    if !grads.is_finite() {
        return Err(CkdError::NonFinite {
            what: "gradient",
            epoch: ctx.epoch,
            batch: ctx.batch,
        });
    }
    for ((theta, g), v) in params.values_mut().zip(grads.values()).zip(state.velocity.values_mut()) {
        *v = config.momentum * *v + g + config.weight_decay * *theta;
        *theta -= lr * *v;
    }
    Ok(())
}
