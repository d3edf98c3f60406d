//! Run configuration: every knob with its default, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, DatasetConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{CvConfig, LeadTimeMode, McuModel};
use crate::models::{CnnSpec, VitSpec};
use crate::train::{FocalConfig, KdConfig, OptimConfig, TrainConfig};

pub const SEED_ENV: &str = "PFKD_SEED";
pub const SNAPSHOT_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Raw dataset, read by `prepare`.
    pub data_dir: Option<PathBuf>,
    /// Output of `prepare`, read by training and evaluation.
    pub prepared_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub lead_time_mode: LeadTimeMode,
    pub compare_without_kd: bool,
    pub jobs: usize,
    pub dataset: DatasetConfig,
    pub vit: VitSpec,
    pub cnn: CnnSpec,
    pub augment: AugmentConfig,
    pub focal: FocalConfig,
    pub kd: KdConfig,
    pub optim: OptimConfig,
    pub mcu: McuModel,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            data_dir: None,
            prepared_dir: None,
            out_dir: PathBuf::from("runs"),
            lead_time_mode: LeadTimeMode::Net,
            compare_without_kd: true,
            jobs: 1,
            dataset: DatasetConfig::default(),
            vit: VitSpec::default(),
            cnn: CnnSpec::default(),
            augment: AugmentConfig::default(),
            focal: FocalConfig::default(),
            kd: KdConfig::default(),
            optim: OptimConfig::default(),
            mcu: McuModel::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if let Some(base) = base {
            for p in [&mut cfg.data_dir, &mut cfg.prepared_dir].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = base.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Applies `PFKD_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.vit.validate()?;
        self.cnn.validate()?;
        self.train().validate()?;
        self.mcu.validate()?;
        self.synth.validate()
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            augment: self.augment.clone(),
            focal: self.focal.clone(),
            kd: self.kd.clone(),
            optim: self.optim.clone(),
        }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            vit: self.vit.clone(),
            cnn: self.cnn.clone(),
            train: self.train(),
            mcu: self.mcu,
            lead_time_mode: self.lead_time_mode,
            compare_without_kd: self.compare_without_kd,
        }
    }

    /// Fully resolved TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), None).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1", None).is_err());
        assert!(RunConfig::from_toml("[optim]\nlearning_rate = 0.1", None).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[optim]\nteacher_epochs = 5", None).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.optim.teacher_epochs, 5);
        assert_eq!(cfg.optim.student_epochs, 100);
        assert_eq!(cfg.vit.heads, 3);
    }
}
