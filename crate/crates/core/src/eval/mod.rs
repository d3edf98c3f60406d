//! Confusion semantics, metrics, lead time, latency estimates, and
//! cross-validation.

mod cv;
mod metrics;
mod report;

pub use cv::{run_cv, run_fold, CvConfig, CvResult, FoldResult, STUDENT, STUDENT_KD, TEACHER};
pub use metrics::{
    classify, classify_test_set, confusion, lead_time, mcu_latency_ms, mean_std, metrics, ConfusionCounts,
    LeadTimeMode, McuModel, Metrics,
};
pub use report::{aggregate, evaluate, render_table, to_jsonl, AggregateReport, EvalOptions, EvalReport, ReportRecord};
