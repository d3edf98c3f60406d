//! Window extraction, labeling, and train/test set assembly.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::augment::{augment_noise, augment_scale, AugmentConfig};
use super::types::{ActivityKind, LabeledWindow, SensorInstance, WindowLabel, WINDOW_LEN};
use crate::error::{Error, Result};

pub const ADL_PARTS: usize = 10;
pub const FALL_STRIDE: usize = 10;
/// Post-onset frames a window needs to count as pre-impact fall.
pub const MIN_POST_ONSET_FRAMES: usize = 5;
pub const TEST_FALL_WINDOWS_PER_INSTANCE: usize = 3;

/// Label of the window covering `[start, start + 49]`.
pub fn fall_window_label(start: usize, onset: usize) -> WindowLabel {
    let end = start + WINDOW_LEN - 1;
    let post_onset = if end < onset { 0 } else { end + 1 - start.max(onset) };
    if post_onset >= MIN_POST_ONSET_FRAMES {
        WindowLabel::PreImpactFall
    } else {
        WindowLabel::Adl
    }
}

/// One random window from each of ten equal parts of an ADL instance.
///
/// Parts have `floor(F / 10)` frames with the remainder appended to the
/// last part. The window stays inside its part when the part is long
/// enough; shorter parts anchor the window at the part start, clipped to
/// the instance end.
pub fn sample_adl_windows<R: Rng + ?Sized>(inst: &SensorInstance, rng: &mut R) -> Result<Vec<LabeledWindow>> {
    if inst.kind != ActivityKind::Adl {
        return Err(Error::invalid(
            "instance",
            format!("{} is not an ADL instance", inst.instance_id),
        ));
    }
    let frames = inst.frames();
    if frames < WINDOW_LEN {
        return Err(Error::Data(format!(
            "{}: fewer than {WINDOW_LEN} frames",
            inst.instance_id
        )));
    }
    let part = frames / ADL_PARTS;
    (0..ADL_PARTS)
        .map(|k| {
            let lo = k * part;
            let hi = if k == ADL_PARTS - 1 { frames } else { lo + part };
            let start = if hi - lo >= WINDOW_LEN {
                rng.random_range(lo..=hi - WINDOW_LEN)
            } else {
                lo.min(frames - WINDOW_LEN)
            };
            LabeledWindow::from_instance(inst, start, WindowLabel::Adl)
        })
        .collect()
}

/// Sliding windows (stride 10) from frame 0 up to the impact frame.
pub fn slide_fall_windows(inst: &SensorInstance) -> Result<Vec<LabeledWindow>> {
    let (Some(onset), Some(impact)) = (inst.onset_frame, inst.impact_frame) else {
        return Err(Error::MissingAnnotation {
            instance_id: inst.instance_id.to_string(),
        });
    };
    if impact + 1 < WINDOW_LEN {
        return Err(Error::Data(format!(
            "{}: impact frame {impact} leaves no complete window",
            inst.instance_id
        )));
    }
    (0..=impact + 1 - WINDOW_LEN)
        .step_by(FALL_STRIDE)
        .map(|start| LabeledWindow::from_instance(inst, start, fall_window_label(start, onset)))
        .collect()
}

/// Windows of any instance, dispatching on its kind.
pub fn windows_for_instance<R: Rng + ?Sized>(inst: &SensorInstance, rng: &mut R) -> Result<Vec<LabeledWindow>> {
    match inst.kind {
        ActivityKind::Adl => sample_adl_windows(inst, rng),
        ActivityKind::Fall => slide_fall_windows(inst),
    }
}

/// Oversamples pre-impact windows and augments every window.
///
/// Each pre-impact window is replicated to `cfg.oversample` copies; every
/// resulting window then gets independent noise and scale draws.
pub fn build_train_set<R: Rng + ?Sized>(
    windows: &[LabeledWindow],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<LabeledWindow>> {
    if windows.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if !windows.iter().any(|w| w.label == WindowLabel::PreImpactFall) {
        log::warn!("training windows contain no pre-impact fall windows");
    }
    let mut out = Vec::with_capacity(windows.len() * 2);
    for w in windows {
        let copies = match w.label {
            WindowLabel::PreImpactFall => cfg.oversample,
            WindowLabel::Adl => 1,
        };
        for _ in 0..copies {
            let noisy = augment_noise(w, cfg, rng);
            out.push(augment_scale(&noisy, cfg, rng));
        }
    }
    Ok(out)
}

/// Keeps every ADL-labeled window and the earliest three pre-impact
/// windows of each fall instance.
pub fn build_test_set(windows: &[LabeledWindow]) -> Vec<LabeledWindow> {
    let mut falls: HashMap<Arc<str>, Vec<&LabeledWindow>> = HashMap::new();
    for w in windows.iter().filter(|w| w.label == WindowLabel::PreImpactFall) {
        falls.entry(w.instance_id.clone()).or_default().push(w);
    }
    let mut keep: HashMap<(Arc<str>, usize), ()> = HashMap::new();
    for (id, mut ws) in falls {
        ws.sort_by_key(|w| w.start_frame);
        for w in ws.into_iter().take(TEST_FALL_WINDOWS_PER_INSTANCE) {
            keep.insert((id.clone(), w.start_frame), ());
        }
    }
    windows
        .iter()
        .filter(|w| w.label == WindowLabel::Adl || keep.contains_key(&(w.instance_id.clone(), w.start_frame)))
        .cloned()
        .collect()
}
