//! One fold end to end on a small synthetic set: teacher, distilled
//! student, and their test metrics with lead times.

use prefallkd::data::{synth, PreparedDataset, SynthConfig};
use prefallkd::eval::{evaluate, render_table, EvalOptions};
use prefallkd::models::{CnnSpec, ModelSpec, VitSpec};
use prefallkd::train::{train_student, train_teacher, Teacher, TrainConfig};

fn main() -> prefallkd::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed = 3;
    let synth_cfg = SynthConfig {
        subjects: 5,
        adl_per_subject: 4,
        falls_per_subject: 3,
        ..SynthConfig::default()
    };
    let data = PreparedDataset::prepare(&synth::generate(&synth_cfg, seed)?, seed)?;

    let mut cfg = TrainConfig::default();
    cfg.optim.teacher_epochs = 6;
    cfg.optim.student_epochs = 4;
    cfg.optim.warmup_epochs = 1;
    let (vit, cnn) = (VitSpec::default(), CnnSpec::default());
    let fold = 0;

    let teacher = train_teacher(&data, fold, &vit, &cfg, seed)?;
    let t = Teacher {
        fold,
        spec: &vit,
        state: &teacher.state,
    };
    let student = train_student(&data, fold, &cnn, Some(t), &cfg, seed)?;
    for m in &student.metrics {
        println!(
            "student epoch {} beta {:.2} loss {:.4} acc {:.1}%",
            m.epoch,
            m.beta,
            m.loss,
            100.0 * m.train_accuracy
        );
    }

    let opts = EvalOptions::default();
    let reports = [
        evaluate(&data, fold, "teacher", &ModelSpec::Vit(vit), &teacher.state, &opts)?,
        evaluate(&data, fold, "student_kd", &ModelSpec::Cnn(cnn), &student.state, &opts)?,
    ];
    print!("{}", render_table(&reports, &[]));
    Ok(())
}
