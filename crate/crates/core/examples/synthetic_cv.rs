//! Five-fold cross-validation on the synthetic dataset with short
//! schedules: teacher, distilled student, and plain student.
//!
//! cargo run --release --example synthetic_cv -- [teacher_epochs] [student_epochs]

use std::time::Instant;

use prefallkd::data::{synth, PreparedDataset, SynthConfig};
use prefallkd::eval::{render_table, run_cv, CvConfig};

fn main() -> prefallkd::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seed = 7;
    let instances = synth::generate(&SynthConfig::default(), seed)?;
    let data = PreparedDataset::prepare(&instances, seed)?;
    println!("{:?}", data.summary());

    let mut cfg = CvConfig {
        compare_without_kd: true,
        ..CvConfig::default()
    };
    cfg.train.optim.teacher_epochs = args.first().copied().unwrap_or(12);
    cfg.train.optim.student_epochs = args.get(1).copied().unwrap_or(8);
    cfg.train.optim.warmup_epochs = 2;

    let t = Instant::now();
    let result = run_cv(&data, &cfg, seed, 1)?;
    print!("{}", render_table(&result.reports(), &result.aggregates));
    println!("elapsed {:.1} s", t.elapsed().as_secs_f64());
    Ok(())
}
