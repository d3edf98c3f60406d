//! Focal, KL-divergence, and distillation losses, both on the tape and as
//! plain functions over probabilities.

use serde::{Deserialize, Serialize};

use crate::data::WindowLabel;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Probabilities are clamped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalConfig {
    /// Weight of the pre-impact fall class; ADL gets `1 - alpha`.
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "focal alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn class_weight(&self, label: WindowLabel) -> f64 {
        match label {
            WindowLabel::PreImpactFall => self.alpha,
            WindowLabel::Adl => 1.0 - self.alpha,
        }
    }
}

/// `-w (1 - p)^gamma ln p` for one sample.
pub fn focal_term(p: f64, weight: f64, gamma: f64) -> f64 {
    let p = p.max(PROB_FLOOR);
    -weight * (1.0 - p).max(0.0).powf(gamma) * p.ln()
}

/// Mean focal loss given the probability of each sample's true class.
pub fn focal_loss(p_true: &[f64], labels: &[WindowLabel], cfg: &FocalConfig) -> Result<f64> {
    if p_true.is_empty() || p_true.len() != labels.len() {
        return Err(Error::invalid(
            "p_true",
            format!("{} probabilities for {} labels", p_true.len(), labels.len()),
        ));
    }
    let s: f64 = p_true
        .iter()
        .zip(labels)
        .map(|(&p, &l)| focal_term(p, cfg.class_weight(l), cfg.gamma))
        .sum();
    Ok(s / p_true.len() as f64)
}

fn check_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<()> {
    for r in rows {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-6 || r.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(name, format!("row {r:?} is not a distribution")));
        }
    }
    Ok(())
}

/// Mean over samples of `sum_c P_t(c) ln(P_t(c) / P_s(c))`.
///
/// The inputs are already tempered; see [`tempered`].
pub fn kl_div_loss(p_s: &[Vec<f64>], p_t: &[Vec<f64>]) -> Result<f64> {
    if p_s.is_empty() || p_s.len() != p_t.len() || p_s.iter().zip(p_t).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape(
            "kl_div_loss",
            "student and teacher distributions differ in shape",
        ));
    }
    check_rows("p_s", p_s)?;
    check_rows("p_t", p_t)?;
    let mut clamped = false;
    let mut total = 0.0;
    for (s, t) in p_s.iter().zip(p_t) {
        for (&ps, &pt) in s.iter().zip(t) {
            if ps < PROB_FLOOR {
                clamped = true;
            }
            if pt > 0.0 {
                total += pt * (pt.ln() - ps.max(PROB_FLOOR).ln());
            }
        }
    }
    if clamped {
        log::warn!("kl_div_loss: student probabilities clamped at {PROB_FLOOR:e}");
    }
    Ok(total / p_s.len() as f64)
}

/// `softmax(logits / T)` per row.
pub fn tempered(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|&z| ((z - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `(1 - beta) * focal + beta * kl`.
pub fn kd_loss(
    p_s: &[Vec<f64>],
    p_t: &[Vec<f64>],
    labels: &[WindowLabel],
    beta: f64,
    focal: &FocalConfig,
    temperature: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} outside [0, 1]")));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("{temperature} is not positive")));
    }
    if p_s.len() != p_t.len() {
        return Err(Error::shape(
            "kd_loss",
            format!("{} student rows, {} teacher rows", p_s.len(), p_t.len()),
        ));
    }
    let p_true: Vec<f64> = p_s.iter().zip(labels).map(|(r, l)| r[l.index()]).collect();
    let lf = focal_loss(&p_true, labels, focal)?;
    let temper = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                tempered(
                    &r.iter().map(|p| p.max(PROB_FLOOR).ln()).collect::<Vec<_>>(),
                    temperature,
                )
            })
            .collect()
    };
    let lk = if temperature == 1.0 {
        kl_div_loss(p_s, p_t)?
    } else {
        kl_div_loss(&temper(p_s), &temper(p_t))?
    };
    Ok((1.0 - beta) * lf + beta * lk)
}

/// Focal loss on the tape from `B x 2` log-probabilities.
pub fn focal_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    log_probs: Var,
    labels: &[WindowLabel],
    cfg: &FocalConfig,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::invalid("labels", "empty batch"));
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let lp = tape.pick(log_probs, &idx)?;
    let lp = tape.clamp_min(lp, T::lit(PROB_FLOOR.ln()));
    let p = tape.exp(lp);
    let q = tape.scale(p, T::lit(-1.0));
    let q = tape.add_scalar(q, T::one());
    let q = tape.clamp_min(q, T::zero());
    let w = tape.powf(q, T::lit(cfg.gamma));
    let wl = tape.mul(w, lp)?;
    let alpha: Vec<T> = labels.iter().map(|&l| T::lit(-cfg.class_weight(l))).collect();
    let alpha = tape.constant(Tensor::new(vec![labels.len()], alpha)?);
    let per = tape.mul(wl, alpha)?;
    Ok(tape.mean(per))
}

/// KL divergence on the tape between tempered teacher probabilities
/// (a constant `B x 2` tensor) and the student's log-probabilities.
pub fn kl_div_var<T: Scalar>(
    tape: &mut Tape<T>,
    student_log_probs: Var,
    teacher_probs: &Tensor<T>,
    temperature: f64,
) -> Result<Var> {
    let shape = tape.shape(student_log_probs).to_vec();
    if shape != teacher_probs.shape() {
        return Err(Error::shape(
            "kl_div",
            format!("student {shape:?} vs teacher {:?}", teacher_probs.shape()),
        ));
    }
    let ls = if temperature == 1.0 {
        student_log_probs
    } else {
        let z = tape.scale(student_log_probs, T::lit(1.0 / temperature));
        tape.log_softmax(z)?
    };
    let ls = tape.clamp_min(ls, T::lit(PROB_FLOOR.ln()));
    // sum_c p_t ln p_t is constant; only the cross term carries gradient
    let entropy: f64 = teacher_probs
        .data()
        .iter()
        .map(|&p| p.as_f64())
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum();
    let pt = tape.constant(teacher_probs.clone());
    let cross = tape.mul(pt, ls)?;
    let cross = tape.sum(cross);
    let b = shape[0] as f64;
    let neg = tape.scale(cross, T::lit(-1.0 / b));
    Ok(tape.add_scalar(neg, T::lit(entropy / b)))
}

/// Tempered teacher probabilities from its log-probabilities.
pub fn teacher_targets<T: Scalar>(log_probs: &Tensor<T>, temperature: f64) -> Tensor<T> {
    let c = *log_probs.shape().last().unwrap();
    let data = log_probs
        .data()
        .chunks_exact(c)
        .flat_map(|row| {
            let z: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            tempered(&z, temperature).into_iter().map(T::lit)
        })
        .collect();
    Tensor::new(log_probs.shape().to_vec(), data).expect("same shape")
}

/// Distillation objective on the tape. `teacher_probs` is `None` when
/// distillation is off, which is the same as `beta = 0`.
pub fn kd_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    student_log_probs: Var,
    teacher_probs: Option<&Tensor<T>>,
    labels: &[WindowLabel],
    beta: f64,
    focal: &FocalConfig,
    temperature: f64,
) -> Result<Var> {
    let lf = focal_loss_var(tape, student_log_probs, labels, focal)?;
    let Some(pt) = teacher_probs else {
        return Ok(lf);
    };
    let lk = kl_div_var(tape, student_log_probs, pt, temperature)?;
    if beta == 0.0 {
        return Ok(lf);
    }
    if beta == 1.0 {
        return Ok(lk);
    }
    let a = tape.scale(lf, T::lit(1.0 - beta));
    let b = tape.scale(lk, T::lit(beta));
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FALL: WindowLabel = WindowLabel::PreImpactFall;

    #[test]
    fn focal_values() {
        let cfg = FocalConfig::default();
        assert_eq!(focal_loss(&[1.0], &[FALL], &cfg).unwrap(), 0.0);
        assert!((focal_loss(&[0.5], &[FALL], &cfg).unwrap() - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((focal_loss(&[0.9], &[FALL], &cfg).unwrap() - 0.000263).abs() < 5e-7);
        assert!(focal_loss(&[], &[], &cfg).is_err());
    }

    #[test]
    fn kl_values() {
        let t = vec![vec![0.9, 0.1]];
        let s = vec![vec![0.5, 0.5]];
        assert!((kl_div_loss(&s, &t).unwrap() - 0.368064).abs() < 5e-7);
        assert_eq!(kl_div_loss(&t, &t).unwrap(), 0.0);
        assert!(kl_div_loss(&[vec![0.5, 0.4]], &t).is_err());
    }

    #[test]
    fn kd_mix() {
        let cfg = FocalConfig::default();
        let t = vec![vec![0.9, 0.1]];
        let s = vec![vec![0.5, 0.5]];
        let v = kd_loss(&s, &t, &[FALL], 0.5, &cfg, 1.0).unwrap();
        assert!((v - 0.205693).abs() < 5e-7);
        assert!(kd_loss(&s, &t, &[FALL], 1.5, &cfg, 1.0).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let cfg = FocalConfig::default();
        let probs = [[0.3, 0.7], [0.8, 0.2], [0.55, 0.45]];
        let teacher = [[0.9, 0.1], [0.4, 0.6], [0.5, 0.5]];
        let labels = [FALL, WindowLabel::Adl, FALL];
        let lp: Vec<f64> = probs.iter().flatten().map(|p: &f64| p.ln()).collect();
        for beta in [0.0, 0.3, 1.0] {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::new(vec![3, 2], lp.clone()).unwrap(), true);
            let pt = Tensor::new(vec![3, 2], teacher.iter().flatten().copied().collect()).unwrap();
            let l = kd_loss_var(&mut tape, x, Some(&pt), &labels, beta, &cfg, 1.0).unwrap();
            let ps: Vec<Vec<f64>> = probs.iter().map(|r| r.to_vec()).collect();
            let ptv: Vec<Vec<f64>> = teacher.iter().map(|r| r.to_vec()).collect();
            let want = kd_loss(&ps, &ptv, &labels, beta, &cfg, 1.0).unwrap();
            assert!((tape.value(l).item() - want).abs() < 1e-12, "beta {beta}");
        }
    }
}
