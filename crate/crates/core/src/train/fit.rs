//! Per-fold teacher and student training loops.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{focal_loss_var, kd_loss_var, teacher_targets};
use super::optim::AdamW;
use super::schedule::{beta_at, lr_at, StepPlan};
use super::TrainConfig;
use crate::data::{build_train_set, LabeledWindow, PreparedDataset, Role, WindowLabel};
use crate::error::{Error, Result};
use crate::models::{CnnSpec, ModelSpec, ModelState, VitSpec, NUM_CLASSES};
use crate::rng;
use crate::tensor::{Mode, Tape, Tensor};

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub fold: usize,
    pub epoch: usize,
    pub beta: f64,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    /// Mean batch loss.
    pub loss: f64,
    pub train_accuracy: f64,
}

pub const METRICS_HEADER: &str = "fold,epoch,beta,lr,loss,train_accuracy";

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{METRICS_HEADER}\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.fold, r.epoch, r.beta, r.lr, r.loss, r.train_accuracy
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub state: ModelState<f32>,
    pub metrics: Vec<EpochMetrics>,
}

/// A trained teacher and the fold it was trained for.
#[derive(Clone, Copy)]
pub struct Teacher<'a> {
    pub fold: usize,
    pub spec: &'a VitSpec,
    pub state: &'a ModelState<f32>,
}

/// Trains the ViT teacher on the fold's teacher-train subjects with focal
/// loss only.
pub fn train_teacher(
    data: &PreparedDataset,
    fold: usize,
    spec: &VitSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let windows = data.windows_for(fold, Role::TeacherTrain)?;
    let model = ModelSpec::Vit(spec.clone());
    fit(
        &model,
        &windows,
        None,
        fold,
        "teacher",
        cfg.optim.teacher_epochs,
        cfg,
        seed,
    )
}

/// Trains the CNN student on the fold's student-train subjects. With
/// `teacher` present the loss mixes in distillation from it; without it
/// the loss is focal only.
pub fn train_student(
    data: &PreparedDataset,
    fold: usize,
    spec: &CnnSpec,
    teacher: Option<Teacher<'_>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if let Some(t) = &teacher {
        if t.fold != fold {
            return Err(Error::invalid(
                "teacher",
                format!("teacher was trained for fold {}, student is fold {fold}", t.fold),
            ));
        }
    }
    let windows = data.windows_for(fold, Role::StudentTrain)?;
    let model = ModelSpec::Cnn(spec.clone());
    fit(
        &model,
        &windows,
        teacher,
        fold,
        "student",
        cfg.optim.student_epochs,
        cfg,
        seed,
    )
}

pub(crate) fn predicted_class(row: &[f32]) -> usize {
    // ties go to ADL
    usize::from(row[1] > row[0])
}

#[allow(clippy::too_many_arguments)]
fn fit(
    model: &ModelSpec,
    windows: &[LabeledWindow],
    teacher: Option<Teacher<'_>>,
    fold: usize,
    role: &str,
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tag = format!("{role}/fold{fold}");
    let train = build_train_set(windows, &cfg.augment, &mut rng::stream(seed, &format!("augment/{tag}")))?;
    let wl = model.window_len();
    let inputs: Vec<f32> = train.iter().flat_map(|w| w.data.iter().copied()).collect();
    let labels: Vec<WindowLabel> = train.iter().map(|w| w.label).collect();

    let targets = match teacher {
        Some(t) => {
            let tspec = ModelSpec::Vit(t.spec.clone());
            let lp = tspec.infer_batched(t.state, &inputs, 256)?;
            Some(teacher_targets(&lp, cfg.kd.temperature))
        }
        None => None,
    };

    let mut state: ModelState<f32> = model.build(&mut rng::stream(seed, &format!("init/{tag}")))?;
    state.set_mode(Mode::Train);
    let mut shuffle_rng = rng::stream(seed, &format!("shuffle/{tag}"));
    let mut dropout_rng = rng::stream(seed, &format!("dropout/{tag}"));
    let bs = cfg.optim.batch_size;
    let steps_per_epoch = train.len().div_ceil(bs);
    let plan = StepPlan::new(epochs, steps_per_epoch, cfg.optim.warmup_epochs);
    let mut opt = AdamW::new(&cfg.optim);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(epochs);
    let mut step = 0;

    for epoch in 0..epochs {
        let beta = match &targets {
            Some(_) if epochs >= 2 => beta_at(epoch, epochs, &cfg.kd)?,
            Some(_) => cfg.kd.beta_init,
            None => 0.0,
        };
        order.shuffle(&mut shuffle_rng);
        let epoch_lr = lr_at(step, plan, &cfg.optim);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(bs) {
            let mut batch = Vec::with_capacity(idx.len() * wl);
            for &i in idx {
                batch.extend_from_slice(&inputs[i * wl..(i + 1) * wl]);
            }
            let batch_labels: Vec<WindowLabel> = idx.iter().map(|&i| labels[i]).collect();
            let batch_targets = match &targets {
                Some(t) => {
                    let d = t.data();
                    let rows: Vec<f32> = idx
                        .iter()
                        .flat_map(|&i| d[i * NUM_CLASSES..(i + 1) * NUM_CLASSES].iter().copied())
                        .collect();
                    Some(Tensor::new(vec![idx.len(), NUM_CLASSES], rows)?)
                }
                None => None,
            };

            let mut tape = Tape::new();
            let vars = state.register(&mut tape, true);
            let out = model.forward(&mut tape, &state, &vars, &batch, Mode::Train, &mut dropout_rng)?;
            let loss = match &batch_targets {
                Some(t) => kd_loss_var(
                    &mut tape,
                    out.log_probs,
                    Some(t),
                    &batch_labels,
                    beta,
                    &cfg.focal,
                    cfg.kd.temperature,
                )?,
                None => focal_loss_var(&mut tape, out.log_probs, &batch_labels, &cfg.focal)?,
            };
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numeric {
                    op: "loss",
                    detail: format!("{tag} epoch {epoch} step {step}: loss is {lv}"),
                });
            }
            loss_sum += f64::from(lv) * idx.len() as f64;
            for (row, l) in tape
                .value(out.log_probs)
                .data()
                .chunks_exact(NUM_CLASSES)
                .zip(&batch_labels)
            {
                correct += usize::from(predicted_class(row) == l.index());
            }
            tape.backward(loss)?;
            let grads: Vec<Option<&[f32]>> = vars.iter().map(|(_, v)| tape.grad_slice(v)).collect();
            opt.step(&mut state.params, &grads, lr_at(step, plan, &cfg.optim))?;
            state.apply_bn_updates(out.bn_updates);
            step += 1;
        }
        let m = EpochMetrics {
            fold,
            epoch,
            beta,
            lr: epoch_lr,
            loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
        };
        log::info!(
            "{tag} epoch {epoch}: loss {:.5} acc {:.4} lr {:.2e} beta {:.3}",
            m.loss,
            m.train_accuracy,
            m.lr,
            m.beta
        );
        metrics.push(m);
    }
    state.set_mode(Mode::Eval);
    Ok(TrainOutcome { state, metrics })
}
