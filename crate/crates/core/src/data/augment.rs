//! Gaussian-noise and magnitude-scale augmentation of training windows.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{LabeledWindow, AXES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `U * sigmoid(s) * D`, as written.
    Literal,
    /// `(1 + (U - 1) * sigmoid(s)) * D`, which keeps the mean factor at 1.
    Interpolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Strength `s`; both augmentations are weighted by `sigmoid(s)`.
    pub strength: f64,
    pub noise_coefficient: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    pub scale_mode: ScaleMode,
    /// Total copies of each pre-impact window after oversampling.
    pub oversample: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            strength: -0.5,
            noise_coefficient: 0.25,
            scale_low: 0.75,
            scale_high: 1.25,
            scale_mode: ScaleMode::Literal,
            oversample: 6,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_low < self.scale_high) || !self.strength.is_finite() || self.oversample == 0 {
            return Err(Error::Config(
                "augment: need scale_low < scale_high, finite strength, oversample >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Range of the effective per-window scale factor.
    pub fn scale_factor_range(&self) -> (f64, f64) {
        (self.scale_factor(self.scale_low), self.scale_factor(self.scale_high))
    }

    /// Effective multiplier for a uniform draw `u`.
    pub fn scale_factor(&self, u: f64) -> f64 {
        let g = sigmoid(self.strength);
        match self.scale_mode {
            ScaleMode::Literal => u * g,
            ScaleMode::Interpolated => 1.0 + (u - 1.0) * g,
        }
    }
}

/// Population standard deviation of each axis of a `50 x 9` window.
pub fn axis_std(data: &[f32]) -> [f64; AXES] {
    let frames = data.len() / AXES;
    let mut out = [0.0; AXES];
    for (a, o) in out.iter_mut().enumerate() {
        let mean = (0..frames).map(|t| f64::from(data[t * AXES + a])).sum::<f64>() / frames as f64;
        let var = (0..frames)
            .map(|t| (f64::from(data[t * AXES + a]) - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        *o = var.sqrt();
    }
    out
}

/// Adds `noise_coefficient * sigma * N(0, 1) * sigmoid(s)` to every value,
/// with `sigma` the window's own per-axis standard deviation.
pub fn augment_noise<R: Rng + ?Sized>(window: &LabeledWindow, cfg: &AugmentConfig, rng: &mut R) -> LabeledWindow {
    let sigma = axis_std(&window.data);
    let k = cfg.noise_coefficient * sigmoid(cfg.strength);
    let data = window
        .data
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let z: f64 = StandardNormal.sample(rng);
            (f64::from(d) + k * sigma[i % AXES] * z) as f32
        })
        .collect();
    LabeledWindow { data, ..window.clone() }
}

/// Multiplies the whole window by one random scale factor.
pub fn augment_scale<R: Rng + ?Sized>(window: &LabeledWindow, cfg: &AugmentConfig, rng: &mut R) -> LabeledWindow {
    let u = rng.random_range(cfg.scale_low..cfg.scale_high);
    augment_scale_with_draw(window, cfg, u)
}

/// [`augment_scale`] with the uniform draw supplied by the caller.
pub fn augment_scale_with_draw(window: &LabeledWindow, cfg: &AugmentConfig, u: f64) -> LabeledWindow {
    let f = cfg.scale_factor(u);
    let data = window.data.iter().map(|&d| (f64::from(d) * f) as f32).collect();
    LabeledWindow { data, ..window.clone() }
}
