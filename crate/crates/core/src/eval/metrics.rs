//! Mixed-granularity confusion counts, the five metrics, lead time, and
//! the MCU latency estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{InstanceMeta, LabeledWindow, WindowLabel, FRAME_MS};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ModelState, NUM_CLASSES};
use crate::tensor::Tensor;

/// Argmax per row of `B x 2` scores; ties go to ADL.
pub fn classify(scores: &Tensor<f32>) -> Vec<WindowLabel> {
    scores
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|r| WindowLabel::from_index(crate::train::predicted_class(r)))
        .collect()
}

/// Eval-mode predictions for every window.
pub fn classify_test_set(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    windows: &[LabeledWindow],
    batch_size: usize,
) -> Result<Vec<WindowLabel>> {
    if windows.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let inputs: Vec<f32> = windows.iter().flat_map(|w| w.data.iter().copied()).collect();
    Ok(classify(&spec.infer_batched(state, &inputs, batch_size)?))
}

/// `tp`/`fn` count fall instances; `tn`/`fp` count ADL-labeled windows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
        }
    }
}

/// A fall instance is detected when any of its fall-labeled windows is
/// predicted fall; each ADL-labeled window counts on its own.
pub fn confusion(predictions: &[WindowLabel], windows: &[LabeledWindow]) -> Result<ConfusionCounts> {
    if predictions.len() != windows.len() {
        return Err(Error::invalid(
            "predictions",
            format!("{} predictions for {} windows", predictions.len(), windows.len()),
        ));
    }
    let mut c = ConfusionCounts::default();
    let mut instances: BTreeMap<&str, bool> = BTreeMap::new();
    for (p, w) in predictions.iter().zip(windows) {
        if w.instance_id.is_empty() {
            return Err(Error::Data(format!(
                "window at frame {} has no instance id",
                w.start_frame
            )));
        }
        match w.label {
            WindowLabel::PreImpactFall => {
                *instances.entry(&w.instance_id).or_default() |= *p == WindowLabel::PreImpactFall;
            }
            WindowLabel::Adl if *p == WindowLabel::Adl => c.tn += 1,
            WindowLabel::Adl => c.fp += 1,
        }
    }
    for detected in instances.into_values() {
        if detected {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

/// Metrics in percent. `degenerate` names every metric whose denominator
/// was zero (reported as 0).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio("accuracy", c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_);
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let specificity = ratio("specificity", c.tn, c.tn + c.fp);
    let f1 = if precision + recall == 0.0 {
        degenerate.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy: 100.0 * accuracy,
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        specificity: 100.0 * specificity,
        f1: 100.0 * f1,
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadTimeMode {
    /// Subtracts the estimated computation time.
    #[default]
    Net,
    Raw,
}

/// Time from the end of the earliest fall-predicted pre-impact window to
/// the impact, in ms. `windows` and `predictions` may cover several
/// instances; only this instance's fall-labeled windows are considered.
/// Returns `None` when the instance was not detected.
pub fn lead_time(
    instance: &InstanceMeta,
    windows: &[LabeledWindow],
    predictions: &[WindowLabel],
    est_latency_ms: f64,
    mode: LeadTimeMode,
) -> Result<Option<f64>> {
    let impact = instance.impact_frame.ok_or_else(|| Error::MissingAnnotation {
        instance_id: instance.instance_id.clone(),
    })?;
    let detection = windows
        .iter()
        .zip(predictions)
        .filter(|(w, p)| {
            *w.instance_id == *instance.instance_id
                && w.label == WindowLabel::PreImpactFall
                && **p == WindowLabel::PreImpactFall
        })
        .map(|(w, _)| w.end_frame())
        .min();
    Ok(detection.map(|d| {
        let raw = (impact as f64 - d as f64) * FRAME_MS;
        match mode {
            LeadTimeMode::Raw => raw,
            LeadTimeMode::Net => raw - est_latency_ms,
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McuModel {
    pub flops_per_second: f64,
}

impl Default for McuModel {
    fn default() -> Self {
        McuModel {
            flops_per_second: 11.4e6,
        }
    }
}

impl McuModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.flops_per_second > 0.0) {
            return Err(Error::Config("mcu flops_per_second must be positive".into()));
        }
        Ok(())
    }
}

/// Inference time for `flops` on the MCU, in ms.
pub fn mcu_latency_ms(flops: u64, mcu: &McuModel) -> f64 {
    flops as f64 / mcu.flops_per_second * 1000.0
}

/// Population mean and standard deviation; `None` when empty.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    Some((m, v.sqrt()))
}
