//! `pfkd` subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::RunConfig;
use super::weights::{load_model, save_model, WeightMeta};
use crate::data::{load_dataset, synth, DatasetFormat, PreparedDataset, Role};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, mcu_latency_ms, render_table, run_cv, to_jsonl, EvalOptions, ReportRecord, STUDENT, STUDENT_KD, TEACHER,
};
use crate::models::{count_flops, count_params, FlopReport, ModelKind, ModelSpec, ParamCount};
use crate::train::{train_student, train_teacher, write_metrics_csv, Teacher};

#[derive(Debug, Parser)]
#[command(
    name = "pfkd",
    version,
    about = "Pre-impact fall detection: train, distill, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Canonical,
    Kfall,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, window, label, and split a dataset; cache the result.
    Prepare {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Train the ViT teacher for one fold.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        /// Prepared dataset; overrides `prepared_dir`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the CNN student for one fold, with or without distillation.
    TrainStudent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        teacher_weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        kd: Switch,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate saved weights on a fold's test subjects.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full five-fold pipeline.
    Cv {
        #[arg(long)]
        config: PathBuf,
        /// Folds trained concurrently.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter count, FLOPs, and MCU latency of saved weights.
    Latency {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print one JSON object instead of the text report.
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic two-class dataset in the canonical layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Process exit code for an error: 1 usage/config, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument { .. } => 1,
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

/// Single machine-parsable error line.
pub fn error_line(e: &Error) -> String {
    let msg = serde_json::to_string(&e.to_string()).expect("string serializes");
    format!("error: kind={} code={} msg={msg}", e.kind(), exit_code(e))
}

/// Parses `args` (including the program name), runs the command, and
/// returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = seed_flag {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepared(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PreparedDataset> {
    let dir = flag
        .or_else(|| cfg.prepared_dir.clone())
        .ok_or_else(|| Error::Config("no prepared dataset: set `prepared_dir` or pass --data".into()))?;
    PreparedDataset::load(&dir)
}

fn check_fold(data: &PreparedDataset, fold: usize) -> Result<()> {
    if fold >= data.splits.num_folds() {
        return Err(Error::invalid(
            "fold",
            format!("{fold} is not below {}", data.splits.num_folds()),
        ));
    }
    Ok(())
}

fn meta(cfg: &RunConfig, spec: ModelSpec, role: &str, fold: usize) -> WeightMeta {
    WeightMeta {
        spec,
        role: role.to_string(),
        fold: Some(fold),
        seed: cfg.seed,
        config: cfg.to_toml(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_line(out: &mut dyn Write, s: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

fn run_record(cfg: &RunConfig) -> String {
    let r = ReportRecord::Run {
        seed: cfg.seed,
        config: cfg.to_toml(),
    };
    serde_json::to_string(&r).expect("record serializes") + "\n"
}

#[derive(Serialize)]
struct LatencyReport {
    kind: ModelKind,
    role: String,
    params: ParamCount,
    flops: FlopReport,
    mcu_flops_per_second: f64,
    est_latency_ms: f64,
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Prepare {
            data_dir,
            out: dir,
            seed,
            config,
            format,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(f) = format {
                cfg.dataset.format = match f {
                    FormatArg::Canonical => DatasetFormat::Canonical,
                    FormatArg::Kfall => DatasetFormat::Kfall,
                };
            }
            cfg.data_dir = Some(data_dir.clone());
            cfg.prepared_dir = Some(dir.clone());
            let instances = load_dataset(&data_dir, &cfg.dataset)?;
            let data = PreparedDataset::prepare(&instances, cfg.seed)?;
            data.save(&dir)?;
            cfg.write_snapshot(&dir)?;
            out_line(out, format!("prepared {:?} -> {}", data.summary(), dir.display()))?;
            out_line(
                out,
                "fold role           subjects adl_windows fall_windows fall_instances",
            )?;
            for fold in 0..data.splits.num_folds() {
                for (role, name) in [
                    (Role::Test, "test"),
                    (Role::TeacherTrain, "teacher_train"),
                    (Role::StudentTrain, "student_train"),
                ] {
                    let c = data.role_counts(fold, role)?;
                    out_line(
                        out,
                        format!(
                            "{fold:>4} {name:<14} {:>8} {:>11} {:>12} {:>14}",
                            c.subjects, c.adl_windows, c.fall_windows, c.fall_instances
                        ),
                    )?;
                }
            }
            Ok(())
        }
        Command::TrainTeacher {
            config,
            fold,
            data,
            out: dir,
        } => {
            let cfg = load_config(Some(&config), None)?;
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let ds = prepared(&cfg, data)?;
            check_fold(&ds, fold)?;
            cfg.write_snapshot(&dir)?;
            let r = train_teacher(&ds, fold, &cfg.vit, &cfg.train(), cfg.seed)?;
            let w = dir.join(format!("teacher_fold{fold}.pfkd"));
            save_model(
                &w,
                &r.state,
                &meta(&cfg, ModelSpec::Vit(cfg.vit.clone()), TEACHER, fold),
            )?;
            write_metrics_csv(&dir.join(format!("teacher_fold{fold}_metrics.csv")), &r.metrics)?;
            out_line(out, format!("wrote {}", w.display()))
        }
        Command::TrainStudent {
            config,
            fold,
            teacher_weights,
            kd,
            data,
            out: dir,
        } => {
            let cfg = load_config(Some(&config), None)?;
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let teacher = match (kd, teacher_weights) {
                (Switch::On, None) => {
                    return Err(Error::Config("--kd on needs --teacher-weights".into()));
                }
                (Switch::On, Some(p)) => {
                    let (m, state) = load_model(&p, Some(&ModelSpec::Vit(cfg.vit.clone())))?;
                    Some((m.fold.unwrap_or(usize::MAX), state))
                }
                (Switch::Off, _) => None,
            };
            let ds = prepared(&cfg, data)?;
            check_fold(&ds, fold)?;
            cfg.write_snapshot(&dir)?;
            let t = teacher.as_ref().map(|(f, s)| Teacher {
                fold: *f,
                spec: &cfg.vit,
                state: s,
            });
            let role = if t.is_some() { STUDENT_KD } else { STUDENT };
            let r = train_student(&ds, fold, &cfg.cnn, t, &cfg.train(), cfg.seed)?;
            let w = dir.join(format!("{role}_fold{fold}.pfkd"));
            save_model(&w, &r.state, &meta(&cfg, ModelSpec::Cnn(cfg.cnn.clone()), role, fold))?;
            write_metrics_csv(&dir.join(format!("{role}_fold{fold}_metrics.csv")), &r.metrics)?;
            out_line(out, format!("wrote {}", w.display()))
        }
        Command::Evaluate {
            config,
            weights,
            fold,
            data,
            out: dir,
        } => {
            let cfg = load_config(Some(&config), None)?;
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let peek = super::weights::WeightContainer::load(&weights)?;
            let spec = match peek.kind {
                ModelKind::Vit => ModelSpec::Vit(cfg.vit.clone()),
                ModelKind::Cnn => ModelSpec::Cnn(cfg.cnn.clone()),
            };
            let (m, state) = peek.into_state(Some(&spec))?;
            if m.fold.is_some_and(|f| f != fold) {
                return Err(Error::invalid(
                    "fold",
                    format!("weights were trained for fold {}, not {fold}", m.fold.unwrap()),
                ));
            }
            let ds = prepared(&cfg, data)?;
            check_fold(&ds, fold)?;
            let opts = EvalOptions {
                mcu: cfg.mcu,
                lead_time_mode: cfg.lead_time_mode,
                ..EvalOptions::default()
            };
            let report = evaluate(&ds, fold, &m.role, &spec, &state, &opts)?;
            let reports = [report];
            cfg.write_snapshot(&dir)?;
            let path = dir.join(format!("eval_{}_fold{fold}.jsonl", m.role));
            write_text(&path, &(run_record(&cfg) + &to_jsonl(&reports, &[])))?;
            write!(out, "{}", render_table(&reports, &[])).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Cv {
            config,
            jobs,
            data,
            out: dir,
        } => {
            let cfg = load_config(Some(&config), None)?;
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let jobs = jobs.unwrap_or(cfg.jobs);
            if jobs == 0 {
                return Err(Error::Config("--jobs must be positive".into()));
            }
            let ds = prepared(&cfg, data)?;
            cfg.write_snapshot(&dir)?;
            let result = run_cv(&ds, &cfg.cv(), cfg.seed, jobs)?;
            for f in &result.folds {
                let fdir = dir.join(format!("fold{}", f.fold));
                let runs = [
                    (TEACHER, ModelSpec::Vit(cfg.vit.clone()), Some(&f.teacher)),
                    (STUDENT_KD, ModelSpec::Cnn(cfg.cnn.clone()), Some(&f.student_kd)),
                    (STUDENT, ModelSpec::Cnn(cfg.cnn.clone()), f.student.as_ref()),
                ];
                for (role, spec, r) in runs {
                    if let Some(r) = r {
                        save_model(
                            &fdir.join(format!("{role}.pfkd")),
                            &r.state,
                            &meta(&cfg, spec, role, f.fold),
                        )?;
                        write_metrics_csv(&fdir.join(format!("{role}_metrics.csv")), &r.metrics)?;
                    }
                }
            }
            let reports = result.reports();
            let table = render_table(&reports, &result.aggregates);
            write_text(
                &dir.join("reports.jsonl"),
                &(run_record(&cfg) + &to_jsonl(&reports, &result.aggregates)),
            )?;
            write_text(&dir.join("report.txt"), &table)?;
            write!(out, "{table}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::Latency { weights, config, json } => {
            let cfg = load_config(config.as_deref(), None)?;
            let c = super::weights::WeightContainer::load(&weights)?;
            let expected = config.as_ref().map(|_| match c.kind {
                ModelKind::Vit => ModelSpec::Vit(cfg.vit.clone()),
                ModelKind::Cnn => ModelSpec::Cnn(cfg.cnn.clone()),
            });
            let (m, state) = c.into_state(expected.as_ref())?;
            let flops = count_flops(&m.spec);
            let report = LatencyReport {
                kind: state.kind,
                role: m.role.clone(),
                params: count_params(&state),
                est_latency_ms: mcu_latency_ms(flops.total, &cfg.mcu),
                mcu_flops_per_second: cfg.mcu.flops_per_second,
                flops,
            };
            if json {
                let s = serde_json::to_string(&report).map_err(|e| Error::Data(e.to_string()))?;
                return out_line(out, s);
            }
            out_line(out, format!("model     {:?} ({})", report.kind, report.role))?;
            out_line(
                out,
                format!(
                    "params    {} ({} bytes at 32-bit)",
                    report.params.count, report.params.bytes_at_32bit
                ),
            )?;
            for l in &report.flops.layers {
                out_line(out, format!("  {:<28} {:>12}", l.name, l.flops))?;
            }
            out_line(out, format!("flops     {}", report.flops.total))?;
            out_line(
                out,
                format!(
                    "latency   {:.2} ms at {:.3e} FLOP/s",
                    report.est_latency_ms, report.mcu_flops_per_second
                ),
            )?;
            out_line(out, format!("counting  {}", report.flops.conventions))
        }
        Command::Synth { out: dir, seed, config } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let instances = synth::generate(&cfg.synth, cfg.seed)?;
            synth::write_canonical(&dir, &instances)?;
            cfg.write_snapshot(&dir)?;
            out_line(out, format!("wrote {} instances to {}", instances.len(), dir.display()))
        }
    }
}
