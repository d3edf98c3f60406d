//! Losses, schedules, optimizer, and the teacher/student training loops.

mod fit;
pub mod loss;
mod optim;
pub mod schedule;

pub(crate) use fit::predicted_class;
pub use fit::{train_student, train_teacher, write_metrics_csv, EpochMetrics, Teacher, TrainOutcome, METRICS_HEADER};
pub use loss::{
    focal_loss, focal_loss_var, focal_term, kd_loss, kd_loss_var, kl_div_loss, kl_div_var, teacher_targets, tempered,
    FocalConfig,
};
pub use optim::AdamW;
pub use schedule::{beta_at, lr_at, BetaSchedule, KdConfig, OptimConfig, StepPlan};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::Result;

/// Everything a training loop needs besides the data and the model spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub augment: AugmentConfig,
    pub focal: FocalConfig,
    pub kd: KdConfig,
    pub optim: OptimConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.focal.validate()?;
        self.kd.validate()?;
        self.optim.validate()
    }
}
