//! Leave-one-group-out cross-validation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{LeadTimeMode, McuModel};
use super::report::{aggregate, evaluate, AggregateReport, EvalOptions, EvalReport};
use crate::data::{PreparedDataset, Role};
use crate::error::{Error, Result};
use crate::models::{CnnSpec, ModelSpec, VitSpec};
use crate::train::{train_student, train_teacher, Teacher, TrainConfig, TrainOutcome};

pub const TEACHER: &str = "teacher";
pub const STUDENT_KD: &str = "student_kd";
pub const STUDENT: &str = "student";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub vit: VitSpec,
    pub cnn: CnnSpec,
    pub train: TrainConfig,
    pub mcu: McuModel,
    pub lead_time_mode: LeadTimeMode,
    /// Also trains the student without distillation.
    pub compare_without_kd: bool,
}

pub struct FoldResult {
    pub fold: usize,
    pub teacher: TrainOutcome,
    pub student_kd: TrainOutcome,
    pub student: Option<TrainOutcome>,
    pub reports: Vec<EvalReport>,
}

pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub aggregates: Vec<AggregateReport>,
}

impl CvResult {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.folds.iter().flat_map(|f| f.reports.iter().cloned()).collect()
    }
}

/// Trains and evaluates one fold: teacher, distilled student, and
/// optionally the plain student.
pub fn run_fold(data: &PreparedDataset, fold: usize, cfg: &CvConfig, seed: u64) -> Result<FoldResult> {
    let opts = EvalOptions {
        mcu: cfg.mcu,
        lead_time_mode: cfg.lead_time_mode,
        ..EvalOptions::default()
    };
    let teacher = train_teacher(data, fold, &cfg.vit, &cfg.train, seed)?;
    let t = Teacher {
        fold,
        spec: &cfg.vit,
        state: &teacher.state,
    };
    let student_kd = train_student(data, fold, &cfg.cnn, Some(t), &cfg.train, seed)?;
    let student = if cfg.compare_without_kd {
        Some(train_student(data, fold, &cfg.cnn, None, &cfg.train, seed)?)
    } else {
        None
    };
    let vit = ModelSpec::Vit(cfg.vit.clone());
    let cnn = ModelSpec::Cnn(cfg.cnn.clone());
    let mut reports = vec![
        evaluate(data, fold, TEACHER, &vit, &teacher.state, &opts)?,
        evaluate(data, fold, STUDENT_KD, &cnn, &student_kd.state, &opts)?,
    ];
    if let Some(s) = &student {
        reports.push(evaluate(data, fold, STUDENT, &cnn, &s.state, &opts)?);
    }
    Ok(FoldResult {
        fold,
        teacher,
        student_kd,
        student,
        reports,
    })
}

/// Runs every fold, at most `jobs` at a time, and aggregates per model.
pub fn run_cv(data: &PreparedDataset, cfg: &CvConfig, seed: u64, jobs: usize) -> Result<CvResult> {
    let n = data.splits.num_folds();
    for fold in 0..n {
        if data.fall_instances_for(fold, Role::Test)?.is_empty() {
            return Err(Error::Data(format!(
                "fold {fold}: test subjects {:?} have no fall instances",
                data.splits.subjects(fold, Role::Test)?
            )));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<FoldResult>>> = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n) {
            s.spawn(|| loop {
                let fold = next.fetch_add(1, Ordering::SeqCst);
                if fold >= n {
                    break;
                }
                let r = run_fold(data, fold, cfg, seed);
                let failed = r.is_err();
                results.lock().unwrap().push(r);
                if failed {
                    next.store(n, Ordering::SeqCst);
                }
            });
        }
    });
    let mut folds = results.into_inner().unwrap().into_iter().collect::<Result<Vec<_>>>()?;
    folds.sort_by_key(|f| f.fold);
    let mut aggregates = Vec::new();
    for model in [TEACHER, STUDENT_KD, STUDENT] {
        let rs: Vec<&EvalReport> = folds
            .iter()
            .flat_map(|f| f.reports.iter())
            .filter(|r| r.model == model)
            .collect();
        if !rs.is_empty() {
            aggregates.push(aggregate(&rs)?);
        }
    }
    Ok(CvResult { folds, aggregates })
}
