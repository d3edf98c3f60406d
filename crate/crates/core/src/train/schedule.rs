//! Distillation-weight and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `beta_init * (1 - epoch / (total - 1))`.
    Linear,
    /// `beta_init * beta_decay^epoch`.
    Exponential,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    pub beta_init: f64,
    pub beta_schedule: BetaSchedule,
    pub beta_decay: f64,
    pub temperature: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            beta_init: 1.0,
            beta_schedule: BetaSchedule::Linear,
            beta_decay: 0.95,
            temperature: 1.0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_init) {
            return Err(Error::Config(format!(
                "beta_init must lie in [0, 1], got {}",
                self.beta_init
            )));
        }
        if !(self.beta_decay > 0.0 && self.beta_decay <= 1.0) {
            return Err(Error::Config(format!(
                "beta_decay must lie in (0, 1], got {}",
                self.beta_decay
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Distillation weight for `epoch` (zero-based) of `total_epochs`.
pub fn beta_at(epoch: usize, total_epochs: usize, cfg: &KdConfig) -> Result<f64> {
    if total_epochs < 2 {
        return Err(Error::invalid(
            "total_epochs",
            format!("need at least 2, got {total_epochs}"),
        ));
    }
    if epoch >= total_epochs {
        return Err(Error::invalid("epoch", format!("{epoch} not below {total_epochs}")));
    }
    let b = match cfg.beta_schedule {
        BetaSchedule::Linear => cfg.beta_init * (1.0 - epoch as f64 / (total_epochs - 1) as f64),
        BetaSchedule::Exponential => cfg.beta_init * cfg.beta_decay.powi(epoch as i32),
        BetaSchedule::Constant => cfg.beta_init,
    };
    Ok(b.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub cosine_waves: f64,
    pub batch_size: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_epochs: 10,
            cosine_waves: 0.5,
            batch_size: 64,
            teacher_epochs: 150,
            student_epochs: 100,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optim: {m}")));
        if !(self.lr >= 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.cosine_waves > 0.0) {
            return bad("lr, eps, weight_decay, and cosine_waves must be non-negative (eps and waves positive)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.teacher_epochs == 0 || self.student_epochs == 0 {
            return bad("batch_size and epoch counts must be positive");
        }
        Ok(())
    }
}

/// Step layout of one training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl StepPlan {
    pub fn new(epochs: usize, steps_per_epoch: usize, warmup_epochs: usize) -> Self {
        StepPlan {
            total_steps: epochs * steps_per_epoch,
            warmup_steps: warmup_epochs.min(epochs) * steps_per_epoch,
        }
    }
}

/// Linear warmup from 0, then cosine decay that ends at zero on the final
/// step when `cosine_waves` is 0.5.
pub fn lr_at(step: usize, plan: StepPlan, cfg: &OptimConfig) -> f64 {
    let StepPlan {
        total_steps,
        warmup_steps,
    } = plan;
    if step < warmup_steps {
        return cfg.lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    let f = 0.5 * (1.0 + (std::f64::consts::PI * 2.0 * cfg.cosine_waves * progress).cos());
    cfg.lr * f.max(0.0)
}
