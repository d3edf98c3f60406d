use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor axes per frame: acceleration, angular velocity, and Euler angles,
/// each x/y/z.
pub const AXES: usize = 9;
/// Frames per window (0.5 s at 100 Hz).
pub const WINDOW_LEN: usize = 50;
pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const FRAME_MS: f64 = 1000.0 / SAMPLE_RATE_HZ;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityKind {
    Adl,
    Fall,
}

/// Window class. The discriminant is the model's class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Adl = 0,
    PreImpactFall = 1,
}

impl WindowLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            WindowLabel::PreImpactFall
        } else {
            WindowLabel::Adl
        }
    }
}

/// One recorded trial.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorInstance {
    pub subject_id: u32,
    pub instance_id: Arc<str>,
    pub kind: ActivityKind,
    /// Row-major `frames x 9` samples.
    pub samples: Vec<f32>,
    pub onset_frame: Option<usize>,
    pub impact_frame: Option<usize>,
}

impl SensorInstance {
    pub fn new(
        subject_id: u32,
        instance_id: impl Into<Arc<str>>,
        kind: ActivityKind,
        samples: Vec<f32>,
        annotation: Option<(usize, usize)>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        if !samples.len().is_multiple_of(AXES) {
            return Err(Error::Data(format!(
                "{instance_id}: sample count is not a multiple of {AXES}"
            )));
        }
        let frames = samples.len() / AXES;
        if frames < WINDOW_LEN {
            return Err(Error::Data(format!(
                "{instance_id}: {frames} frames, need at least {WINDOW_LEN}"
            )));
        }
        if let Some((onset, impact)) = annotation {
            if !(onset < impact && impact < frames) {
                return Err(Error::Data(format!(
                    "{instance_id}: need onset < impact < {frames}, got onset {onset}, impact {impact}"
                )));
            }
        }
        if kind == ActivityKind::Fall && annotation.is_none() {
            return Err(Error::MissingAnnotation {
                instance_id: instance_id.to_string(),
            });
        }
        Ok(SensorInstance {
            subject_id,
            instance_id,
            kind,
            samples,
            onset_frame: annotation.map(|a| a.0),
            impact_frame: annotation.map(|a| a.1),
        })
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / AXES
    }

    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta {
            instance_id: self.instance_id.to_string(),
            subject_id: self.subject_id,
            kind: self.kind,
            frames: self.frames(),
            onset_frame: self.onset_frame,
            impact_frame: self.impact_frame,
        }
    }
}

/// Instance header without the samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub instance_id: String,
    pub subject_id: u32,
    pub kind: ActivityKind,
    pub frames: usize,
    pub onset_frame: Option<usize>,
    pub impact_frame: Option<usize>,
}

/// A 50-frame slice of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    /// Row-major `50 x 9`.
    pub data: Vec<f32>,
    pub label: WindowLabel,
    pub instance_id: Arc<str>,
    pub start_frame: usize,
    pub subject_id: u32,
}

impl LabeledWindow {
    pub fn from_instance(inst: &SensorInstance, start_frame: usize, label: WindowLabel) -> Result<Self> {
        if start_frame + WINDOW_LEN > inst.frames() {
            return Err(Error::Data(format!(
                "{}: window at {start_frame} exceeds {} frames",
                inst.instance_id,
                inst.frames()
            )));
        }
        Ok(LabeledWindow {
            data: inst.samples[start_frame * AXES..(start_frame + WINDOW_LEN) * AXES].to_vec(),
            label,
            instance_id: inst.instance_id.clone(),
            start_frame,
            subject_id: inst.subject_id,
        })
    }

    /// Last frame covered by the window.
    pub fn end_frame(&self) -> usize {
        self.start_frame + WINDOW_LEN - 1
    }
}
