//! Synthetic two-class dataset: ADL frames follow one autoregressive
//! Gaussian process, post-onset fall frames another with a shifted mean
//! and larger innovations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{ActivityKind, SensorInstance, AXES, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: u32,
    pub adl_per_subject: u32,
    pub falls_per_subject: u32,
    pub adl_frames: usize,
    pub fall_frames: usize,
    /// Onsets are drawn from these frames.
    pub onsets: Vec<usize>,
    pub impact: usize,
    /// AR(1) coefficient of the ADL process.
    pub ar_coefficient: f64,
    /// Stationary std of the ADL process.
    pub adl_std: f64,
    /// Std of the per-subject, per-axis mean offset.
    pub subject_offset: f64,
    /// Mean shift of the post-onset process, signed per axis.
    pub fall_shift: f64,
    /// Innovation std of the post-onset process, in units of `adl_std`.
    pub fall_noise: f64,
    /// Frames over which the mean shift ramps in.
    pub fall_ramp: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 10,
            adl_per_subject: 10,
            falls_per_subject: 5,
            adl_frames: 600,
            fall_frames: 300,
            onsets: vec![170, 180, 190],
            impact: 240,
            ar_coefficient: 0.95,
            adl_std: 0.02,
            subject_offset: 0.01,
            fall_shift: 16.0,
            fall_noise: 1.0,
            fall_ramp: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.subjects == 0 || self.adl_per_subject + self.falls_per_subject == 0 {
            return bad("need at least one subject and one instance".into());
        }
        if self.adl_frames < WINDOW_LEN {
            return bad(format!("adl_frames must be at least {WINDOW_LEN}"));
        }
        if self.onsets.is_empty() || self.onsets.iter().any(|&o| o >= self.impact) {
            return bad("every onset must precede the impact".into());
        }
        if self.impact + 1 < WINDOW_LEN || self.impact >= self.fall_frames {
            return bad(format!("impact must lie in [{}, fall_frames)", WINDOW_LEN - 1));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return bad("ar_coefficient must lie in [0, 1)".into());
        }
        if !(self.adl_std > 0.0 && self.fall_noise >= 0.0 && self.subject_offset >= 0.0) {
            return bad("adl_std must be positive, fall_noise and subject_offset non-negative".into());
        }
        Ok(())
    }
}

/// Axis signs of the post-onset shift: acceleration and angular velocity
/// move in opposite directions, Euler angles drift upward.
const SHIFT_SIGN: [f64; AXES] = [-1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 0.5, 0.5, 0.5];

fn simulate<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    frames: usize,
    offset: &[f64; AXES],
    onset: Option<usize>,
    rng: &mut R,
) -> Vec<f32> {
    let phi = cfg.ar_coefficient;
    let innov = (1.0 - phi * phi).sqrt();
    let mut state: [f64; AXES] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let mut out = Vec::with_capacity(frames * AXES);
    for t in 0..frames {
        let post = onset.filter(|&o| t >= o).map(|o| t - o);
        for a in 0..AXES {
            let z: f64 = StandardNormal.sample(rng);
            let value = match post {
                None => {
                    state[a] = phi * state[a] + innov * z;
                    offset[a] + cfg.adl_std * state[a]
                }
                Some(k) => {
                    let ramp = ((k + 1) as f64 / cfg.fall_ramp.max(1) as f64).min(1.0);
                    state[a] = 0.5 * state[a] + cfg.fall_noise * z;
                    offset[a] + SHIFT_SIGN[a] * cfg.fall_shift * ramp + cfg.adl_std * state[a]
                }
            };
            out.push(value as f32);
        }
    }
    out
}

/// Builds the synthetic instances. Subject `s` (1-based) owns ADL tasks
/// `T01..` and fall tasks `T20..`, one trial each.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<SensorInstance>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for subject in 1..=cfg.subjects {
        let mut srng = rng::stream(seed, &format!("synth/subject/{subject}"));
        let offset: [f64; AXES] = std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut srng);
            cfg.subject_offset * z
        });
        for k in 0..cfg.adl_per_subject {
            let id = format!("S{subject:02}T{:02}R01", k + 1);
            let mut r = rng::stream(seed, &format!("synth/{id}"));
            let samples = simulate(cfg, cfg.adl_frames, &offset, None, &mut r);
            out.push(SensorInstance::new(subject, id, ActivityKind::Adl, samples, None)?);
        }
        for k in 0..cfg.falls_per_subject {
            let id = format!("S{subject:02}T{:02}R01", k + 20);
            let mut r = rng::stream(seed, &format!("synth/{id}"));
            let onset = cfg.onsets[r.random_range(0..cfg.onsets.len())];
            let samples = simulate(cfg, cfg.fall_frames, &offset, Some(onset), &mut r);
            out.push(SensorInstance::new(
                subject,
                id,
                ActivityKind::Fall,
                samples,
                Some((onset, cfg.impact)),
            )?);
        }
    }
    Ok(out)
}

/// Writes instances in the canonical layout: `manifest.csv`, `labels.csv`,
/// and one `sensor/<id>.csv` per instance with a frame counter column.
pub fn write_canonical(dir: &Path, instances: &[SensorInstance]) -> Result<()> {
    let sensor_dir = dir.join("sensor");
    fs::create_dir_all(&sensor_dir).map_err(|e| Error::io(&sensor_dir, e))?;
    let mut manifest = String::from("instance_id,subject_id,kind,file\n");
    let mut labels = String::from("instance_id,onset_frame,impact_frame\n");
    for inst in instances {
        let kind = match inst.kind {
            ActivityKind::Adl => "adl",
            ActivityKind::Fall => "fall",
        };
        let file = format!("sensor/{}.csv", inst.instance_id);
        writeln!(manifest, "{},{},{kind},{file}", inst.instance_id, inst.subject_id).unwrap();
        if let (Some(o), Some(i)) = (inst.onset_frame, inst.impact_frame) {
            writeln!(labels, "{},{o},{i}", inst.instance_id).unwrap();
        }
        let mut body = String::from("frame,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z,eul_x,eul_y,eul_z\n");
        for (t, row) in inst.samples.chunks_exact(AXES).enumerate() {
            write!(body, "{t}").unwrap();
            for v in row {
                write!(body, ",{v}").unwrap();
            }
            body.push('\n');
        }
        let path = dir.join(&file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    for (name, text) in [("manifest.csv", manifest), ("labels.csv", labels)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let inst = generate(&SynthConfig::default(), 1).unwrap();
        assert_eq!(inst.len(), 150);
        let falls = inst.iter().filter(|i| i.kind == ActivityKind::Fall).count();
        assert_eq!(falls, 50);
        assert!(inst.iter().all(|i| i.samples.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig {
            subjects: 2,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg, 4).unwrap(), generate(&cfg, 4).unwrap());
        assert_ne!(generate(&cfg, 4).unwrap(), generate(&cfg, 5).unwrap());
    }

    #[test]
    fn rejects_onset_after_impact() {
        let cfg = SynthConfig {
            onsets: vec![250],
            ..SynthConfig::default()
        };
        assert!(generate(&cfg, 0).is_err());
    }
}
