//! Per-fold and aggregate reports, as a text table and as JSON Lines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{
    classify_test_set, confusion, lead_time, mcu_latency_ms, mean_std, metrics, ConfusionCounts, LeadTimeMode,
    McuModel, Metrics,
};
use crate::data::{build_test_set, PreparedDataset, Role};
use crate::error::{Error, Result};
use crate::models::{count_flops, count_params, ModelSpec, ModelState, ParamCount};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: usize,
    pub model: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub lead_time_mode: LeadTimeMode,
    /// One entry per detected fall instance.
    pub lead_times_ms: Vec<f64>,
    pub lead_time_mean_ms: Option<f64>,
    pub lead_time_std_ms: Option<f64>,
    pub flops: u64,
    pub est_latency_ms: f64,
    pub params: ParamCount,
}

pub struct EvalOptions {
    pub mcu: McuModel,
    pub lead_time_mode: LeadTimeMode,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mcu: McuModel::default(),
            lead_time_mode: LeadTimeMode::Net,
            batch_size: 256,
        }
    }
}

/// Evaluates a trained model on the fold's test subjects.
pub fn evaluate(
    data: &PreparedDataset,
    fold: usize,
    model: &str,
    spec: &ModelSpec,
    state: &ModelState<f32>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    spec.check_state(state)?;
    let falls = data.fall_instances_for(fold, Role::Test)?;
    if falls.is_empty() {
        return Err(Error::Data(format!(
            "fold {fold}: test subjects {:?} have no fall instances",
            data.splits.subjects(fold, Role::Test)?
        )));
    }
    let test = build_test_set(&data.windows_for(fold, Role::Test)?);
    let preds = classify_test_set(spec, state, &test, opts.batch_size)?;
    let counts = confusion(&preds, &test)?;
    let flops = count_flops(spec).total;
    let latency = mcu_latency_ms(flops, &opts.mcu);
    let mut lead_times = Vec::new();
    for inst in falls {
        if let Some(t) = lead_time(inst, &test, &preds, latency, opts.lead_time_mode)? {
            lead_times.push(t);
        }
    }
    let ms = mean_std(&lead_times);
    Ok(EvalReport {
        fold,
        model: model.to_string(),
        counts,
        metrics: metrics(&counts),
        lead_time_mode: opts.lead_time_mode,
        lead_time_mean_ms: ms.map(|m| m.0),
        lead_time_std_ms: ms.map(|m| m.1),
        lead_times_ms: lead_times,
        flops,
        est_latency_ms: latency,
        params: count_params(state),
    })
}

/// Cross-fold summary of one model. `mean` averages the fold metrics
/// without weighting; `pooled` recomputes them from summed counts. Lead
/// time statistics pool every detected instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub folds: usize,
    pub mean: Metrics,
    pub pooled_counts: ConfusionCounts,
    pub pooled: Metrics,
    pub lead_time_mode: LeadTimeMode,
    pub lead_time_mean_ms: Option<f64>,
    pub lead_time_std_ms: Option<f64>,
    pub detected_instances: usize,
    pub flops: u64,
    pub est_latency_ms: f64,
    pub params: ParamCount,
}

/// Aggregates the reports of one model across folds.
pub fn aggregate(reports: &[&EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("reports", "nothing to aggregate"))?;
    let n = reports.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| reports.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let mean = Metrics {
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        specificity: avg(|m| m.specificity),
        f1: avg(|m| m.f1),
        degenerate: Vec::new(),
    };
    let pooled_counts = reports.iter().fold(ConfusionCounts::default(), |a, r| a + r.counts);
    let leads: Vec<f64> = reports.iter().flat_map(|r| r.lead_times_ms.iter().copied()).collect();
    let ms = mean_std(&leads);
    Ok(AggregateReport {
        model: first.model.clone(),
        folds: reports.len(),
        mean,
        pooled_counts,
        pooled: metrics(&pooled_counts),
        lead_time_mode: first.lead_time_mode,
        lead_time_mean_ms: ms.map(|m| m.0),
        lead_time_std_ms: ms.map(|m| m.1),
        detected_instances: leads.len(),
        flops: first.flops,
        est_latency_ms: first.est_latency_ms,
        params: first.params,
    })
}

/// One JSON Lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    /// Seed and resolved configuration of the run that wrote the file.
    Run {
        seed: u64,
        config: String,
    },
    Fold(EvalReport),
    Aggregate(AggregateReport),
}

pub fn to_jsonl(reports: &[EvalReport], aggregates: &[AggregateReport]) -> String {
    let mut out = String::new();
    let records = reports
        .iter()
        .cloned()
        .map(ReportRecord::Fold)
        .chain(aggregates.iter().cloned().map(ReportRecord::Aggregate));
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("reports serialize"));
        out.push('\n');
    }
    out
}

fn lead(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.1}±{s:.1}"),
        _ => "-".into(),
    }
}

/// Fixed-width table: one row per fold report, then one per aggregate
/// (fold column `mean`).
pub fn render_table(reports: &[EvalReport], aggregates: &[AggregateReport]) -> String {
    let mut s = String::new();
    let mode = reports
        .first()
        .map(|r| r.lead_time_mode)
        .or(aggregates.first().map(|a| a.lead_time_mode))
        .unwrap_or_default();
    let mode = match mode {
        LeadTimeMode::Net => "net of computation time",
        LeadTimeMode::Raw => "raw",
    };
    writeln!(
        s,
        "{:<12} {:>4} {:>8} {:>9} {:>8} {:>11} {:>8} {:>15} {:>10} {:>8}",
        "model", "fold", "acc%", "prec%", "rec%", "spec%", "f1%", "lead ms", "latency ms", "params"
    )
    .unwrap();
    for r in reports {
        let m = &r.metrics;
        writeln!(
            s,
            "{:<12} {:>4} {:>8.2} {:>9.2} {:>8.2} {:>11.2} {:>8.2} {:>15} {:>10.1} {:>8}",
            r.model,
            r.fold,
            m.accuracy,
            m.precision,
            m.recall,
            m.specificity,
            m.f1,
            lead(r.lead_time_mean_ms, r.lead_time_std_ms),
            r.est_latency_ms,
            r.params.count
        )
        .unwrap();
    }
    for a in aggregates {
        let m = &a.mean;
        writeln!(
            s,
            "{:<12} {:>4} {:>8.2} {:>9.2} {:>8.2} {:>11.2} {:>8.2} {:>15} {:>10.1} {:>8}",
            a.model,
            "mean",
            m.accuracy,
            m.precision,
            m.recall,
            m.specificity,
            m.f1,
            lead(a.lead_time_mean_ms, a.lead_time_std_ms),
            a.est_latency_ms,
            a.params.count
        )
        .unwrap();
    }
    writeln!(s, "lead time: {mode}; latency estimated from analytic FLOPs").unwrap();
    s
}
