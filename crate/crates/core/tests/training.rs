mod common;

use common::{max_grad_error, rng};
use indexmap::IndexMap;
use prefallkd::data::{synth, PreparedDataset, SynthConfig, WindowLabel};
use prefallkd::models::{CnnSpec, VitSpec};
use prefallkd::tensor::{Tape, Tensor};
use prefallkd::train::{
    beta_at, focal_loss, focal_loss_var, kd_loss, kd_loss_var, kl_div_loss, kl_div_var, lr_at, train_student,
    train_teacher, AdamW, BetaSchedule, FocalConfig, KdConfig, OptimConfig, StepPlan, Teacher, TrainConfig,
};
use prefallkd::Error;
use rand::Rng;

const FALL: WindowLabel = WindowLabel::PreImpactFall;
const ADL: WindowLabel = WindowLabel::Adl;

fn random_dist(r: &mut impl Rng) -> Vec<f64> {
    let a: f64 = r.random_range(1e-3..1.0);
    let b: f64 = r.random_range(1e-3..1.0);
    vec![a / (a + b), b / (a + b)]
}

#[test]
fn focal_oracles() {
    let cfg = FocalConfig::default();
    assert_eq!(focal_loss(&[1.0], &[FALL], &cfg).unwrap(), 0.0);
    let half = 0.25 * 0.25 * 2f64.ln();
    assert!((focal_loss(&[0.5], &[FALL], &cfg).unwrap() - 0.043_322).abs() < 1e-6);
    assert!((focal_loss(&[0.5], &[FALL], &cfg).unwrap() - half).abs() < 1e-15);
    let nine = 0.25 * 0.01 * -(0.9f64.ln());
    assert!((focal_loss(&[0.9], &[FALL], &cfg).unwrap() - nine).abs() < 1e-15);
    assert!((nine - 0.000_263).abs() < 1e-6);
    // the ADL class carries 1 - alpha
    assert!((focal_loss(&[0.5], &[ADL], &cfg).unwrap() - 3.0 * half).abs() < 1e-15);
    assert!(focal_loss(&[], &[], &cfg).is_err());
}

#[test]
fn focal_reduces_to_half_cross_entropy() {
    let cfg = FocalConfig { alpha: 0.5, gamma: 0.0 };
    let mut r = rng(1);
    let p: Vec<f64> = (0..50).map(|_| r.random_range(0.01..1.0)).collect();
    let labels: Vec<WindowLabel> = (0..50).map(|i| if i % 3 == 0 { FALL } else { ADL }).collect();
    let ce = -p.iter().map(|x| x.ln()).sum::<f64>() / 50.0;
    assert!((focal_loss(&p, &labels, &cfg).unwrap() - 0.5 * ce).abs() < 1e-12);
}

#[test]
fn kl_oracles() {
    let got = kl_div_loss(&[vec![0.5, 0.5]], &[vec![0.9, 0.1]]).unwrap();
    let oracle = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
    assert!((got - oracle).abs() < 1e-15);
    assert!((got - 0.368_064).abs() < 1e-6);
    assert_eq!(kl_div_loss(&[vec![0.3, 0.7]], &[vec![0.3, 0.7]]).unwrap(), 0.0);
    assert!(kl_div_loss(&[vec![0.3, 0.6]], &[vec![0.3, 0.7]]).is_err());
    // zero student mass is clamped, not infinite
    assert!(kl_div_loss(&[vec![0.0, 1.0]], &[vec![0.5, 0.5]]).unwrap().is_finite());
}

#[test]
fn kl_is_non_negative() {
    let mut r = rng(2);
    for _ in 0..10_000 {
        let s = random_dist(&mut r);
        let t = random_dist(&mut r);
        let k = kl_div_loss(std::slice::from_ref(&s), std::slice::from_ref(&t)).unwrap();
        assert!(k >= -1e-15, "{s:?} {t:?} {k}");
        if k < 1e-12 {
            assert!((s[0] - t[0]).abs() < 1e-5);
        }
    }
}

#[test]
fn kd_endpoints_and_midpoint() {
    let cfg = FocalConfig::default();
    let ps = vec![vec![0.5, 0.5]];
    let pt = vec![vec![0.9, 0.1]];
    let lf = focal_loss(&[0.5], &[FALL], &cfg).unwrap();
    let lk = kl_div_loss(&ps, &pt).unwrap();
    assert_eq!(kd_loss(&ps, &pt, &[FALL], 0.0, &cfg, 1.0).unwrap(), lf);
    assert_eq!(kd_loss(&ps, &pt, &[FALL], 1.0, &cfg, 1.0).unwrap(), lk);
    let mid = kd_loss(&ps, &pt, &[FALL], 0.5, &cfg, 1.0).unwrap();
    assert!((mid - 0.205_693).abs() < 1e-6);
    assert!(kd_loss(&ps, &pt, &[FALL], 1.5, &cfg, 1.0).is_err());
    assert!(kd_loss(&ps, &[vec![0.9, 0.1], vec![0.5, 0.5]], &[FALL], 0.5, &cfg, 1.0).is_err());
}

/// Tape endpoints reproduce the component losses bitwise.
#[test]
fn tape_kd_endpoints() {
    let mut r = rng(3);
    let cfg = FocalConfig::default();
    let labels = [FALL, ADL, ADL, FALL];
    let logits = common::random(&mut r, &[4, 2]);
    let teacher: Vec<f64> = (0..4).flat_map(|_| random_dist(&mut r)).collect();
    let teacher = Tensor::new(vec![4, 2], teacher).unwrap();
    let value = |which: &str, beta: f64| {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(logits.clone(), true);
        let lp = tape.log_softmax(z).unwrap();
        let v = match which {
            "kd" => kd_loss_var(&mut tape, lp, Some(&teacher), &labels, beta, &cfg, 1.0).unwrap(),
            "focal" => focal_loss_var(&mut tape, lp, &labels, &cfg).unwrap(),
            _ => kl_div_var(&mut tape, lp, &teacher, 1.0).unwrap(),
        };
        tape.value(v).item()
    };
    assert_eq!(value("kd", 0.0), value("focal", 0.0));
    assert_eq!(value("kd", 1.0), value("kl", 0.0));

    // and agree with the plain-probability versions
    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(logits.clone(), true);
    let lp = tape.log_softmax(z).unwrap();
    let ps: Vec<Vec<f64>> = tape
        .value(lp)
        .data()
        .chunks(2)
        .map(|c| c.iter().map(|x| x.exp()).collect())
        .collect();
    let pt: Vec<Vec<f64>> = teacher.data().chunks(2).map(<[f64]>::to_vec).collect();
    let plain = kd_loss(&ps, &pt, &labels, 0.3, &cfg, 1.0).unwrap();
    assert!((value("kd", 0.3) - plain).abs() < 1e-12);
}

#[test]
fn kd_gradient_matches_finite_differences() {
    let cfg = FocalConfig::default();
    for t in 0..10 {
        let mut r = rng(40 + t);
        let b = r.random_range(1..6);
        let labels: Vec<WindowLabel> = (0..b).map(|_| if r.random::<bool>() { FALL } else { ADL }).collect();
        let logits = common::random(&mut r, &[b, 2]);
        let teacher: Vec<f64> = (0..b).flat_map(|_| random_dist(&mut r)).collect();
        let teacher = Tensor::new(vec![b, 2], teacher).unwrap();
        let beta = r.random_range(0.0..1.0);
        let temperature = [1.0, 2.0][t as usize % 2];
        let f = |tape: &mut Tape<f64>, v: &[prefallkd::tensor::Var]| {
            let lp = tape.log_softmax(v[0]).unwrap();
            kd_loss_var(tape, lp, Some(&teacher), &labels, beta, &cfg, temperature).unwrap()
        };
        let e = max_grad_error(&f, &[logits]);
        assert!(e < 1e-4, "trial {t}: {e:e}");
    }
}

#[test]
fn beta_schedules() {
    for schedule in [BetaSchedule::Linear, BetaSchedule::Exponential, BetaSchedule::Constant] {
        let cfg = KdConfig {
            beta_schedule: schedule,
            ..KdConfig::default()
        };
        for total in [2, 3, 10, 100] {
            let b: Vec<f64> = (0..total).map(|e| beta_at(e, total, &cfg).unwrap()).collect();
            assert_eq!(b[0], 1.0);
            assert!(b.windows(2).all(|w| w[1] <= w[0]));
            assert!(b.iter().all(|x| (0.0..=1.0).contains(x)));
            if schedule == BetaSchedule::Linear {
                assert_eq!(b[total - 1], 0.0);
            }
        }
    }
    let lin = KdConfig::default();
    assert!((beta_at(49, 100, &lin).unwrap() - 0.505).abs() < 1e-3);
    assert!(beta_at(0, 1, &lin).is_err());
    assert!(beta_at(5, 5, &lin).is_err());
}

#[test]
fn lr_schedule() {
    let cfg = OptimConfig::default();
    let plan = StepPlan::new(100, 10, 10);
    assert_eq!(lr_at(0, plan, &cfg), 0.0);
    assert!((lr_at(50, plan, &cfg) - 5e-4).abs() < 1e-12);
    assert!((lr_at(100, plan, &cfg) - 1e-3).abs() < 1e-12);
    assert!(lr_at(999, plan, &cfg).abs() < 1e-9);
    // steps 100..=999 span 899, so the midpoint of the cosine is a half step
    let mid = 0.5 * (lr_at(549, plan, &cfg) + lr_at(550, plan, &cfg));
    assert!((mid - 5e-4).abs() < 1e-6);
    let odd = StepPlan::new(12, 1, 1);
    assert!((lr_at(6, odd, &cfg) - 5e-4).abs() < 1e-9);
    let lrs: Vec<f64> = (100..1000).map(|s| lr_at(s, plan, &cfg)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

fn params(values: &[f64]) -> IndexMap<String, Tensor<f64>> {
    let mut m = IndexMap::new();
    m.insert(
        "w".to_string(),
        Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
    );
    m
}

#[test]
fn adamw_rules() {
    let no_decay = OptimConfig {
        weight_decay: 0.0,
        ..OptimConfig::default()
    };
    let mut p = params(&[0.3, -2.0]);
    let g = [1.0, 1.0];
    AdamW::new(&no_decay).step(&mut p, &[Some(&g[..])], 1e-3).unwrap();
    assert!((p["w"].data()[0] - (0.3 - 1e-3)).abs() < 1e-9);
    assert!((p["w"].data()[1] - (-2.0 - 1e-3)).abs() < 1e-9);

    let mut p = params(&[0.3, -2.0]);
    AdamW::new(&no_decay)
        .step(&mut p, &[Some(&[0.0, 0.0][..])], 1e-3)
        .unwrap();
    assert_eq!(p["w"].data(), &[0.3, -2.0]);

    let mut p = params(&[0.3, -2.0]);
    AdamW::new(&OptimConfig::default()).step(&mut p, &[None], 1e-3).unwrap();
    assert!((p["w"].data()[0] - 0.3 * (1.0 - 1e-5)).abs() < 1e-15);

    // lr = 0 leaves parameters bitwise unchanged whatever the gradient
    let mut r = rng(4);
    let start: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..20).map(|_| r.random_range(-5.0..5.0)).collect();
    let mut p = params(&start);
    let mut opt = AdamW::new(&OptimConfig::default());
    for _ in 0..3 {
        opt.step(&mut p, &[Some(&g[..])], 0.0).unwrap();
    }
    assert_eq!(p["w"].data(), &start[..]);

    let mut p = params(&[1.0]);
    match AdamW::new(&no_decay).step(&mut p, &[Some(&[f64::NAN][..])], 1e-3) {
        Err(Error::Numeric { detail, .. }) => assert!(detail.contains('w')),
        other => panic!("expected numeric error, got {other:?}"),
    }
    assert_eq!(p["w"].data(), &[1.0]);
}

fn tiny_data(seed: u64) -> PreparedDataset {
    let cfg = SynthConfig {
        subjects: 5,
        adl_per_subject: 3,
        falls_per_subject: 1,
        ..SynthConfig::default()
    };
    PreparedDataset::prepare(&synth::generate(&cfg, seed).unwrap(), seed).unwrap()
}

fn tiny_cfg(teacher_epochs: usize, student_epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.optim.teacher_epochs = teacher_epochs;
    cfg.optim.student_epochs = student_epochs;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 32;
    cfg
}

#[test]
fn teacher_training_is_deterministic() {
    let data = tiny_data(5);
    let cfg = tiny_cfg(2, 2);
    let a = train_teacher(&data, 0, &VitSpec::default(), &cfg, 9).unwrap();
    let b = train_teacher(&data, 0, &VitSpec::default(), &cfg, 9).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.metrics, b.metrics);
    let c = train_teacher(&data, 0, &VitSpec::default(), &cfg, 10).unwrap();
    assert_ne!(a.state, c.state);
}

#[test]
fn teacher_starts_at_chance() {
    let data = tiny_data(6);
    let mut cfg = tiny_cfg(2, 2);
    // lr = 0 keeps every batch at the random initialization
    cfg.optim.lr = 0.0;
    let out = train_teacher(&data, 1, &VitSpec::default(), &cfg, 3).unwrap();
    let windows = data.windows_for(1, prefallkd::data::Role::TeacherTrain).unwrap();
    let falls = windows.iter().filter(|w| w.label == FALL).count() * cfg.augment.oversample;
    let adl = windows.iter().filter(|w| w.label == ADL).count();
    let focal = FocalConfig::default();
    let mean_weight = (falls as f64 * focal.alpha + adl as f64 * (1.0 - focal.alpha)) / (falls + adl) as f64;
    let chance = mean_weight * 0.5f64.powi(2) * 2f64.ln();
    // init logits are small but not zero, so p only approximates 0.5
    let first = out.metrics[0].loss;
    assert!(
        (first / chance - 1.0).abs() < 0.2,
        "epoch-0 loss {first} vs chance {chance}"
    );
}

#[test]
fn teacher_separates_synthetic_windows() {
    let data = tiny_data(6);
    let cfg = tiny_cfg(20, 2);
    let out = train_teacher(&data, 1, &VitSpec::default(), &cfg, 3).unwrap();
    assert_eq!(out.metrics.len(), 20);
    let last = out.metrics.last().unwrap();
    assert!(last.train_accuracy > 0.99, "accuracy {}", last.train_accuracy);
}

#[test]
fn student_kd_contracts() {
    let data = tiny_data(7);
    let cfg = tiny_cfg(2, 2);
    let vit = VitSpec::default();
    let cnn = CnnSpec::default();
    let teacher = train_teacher(&data, 2, &vit, &cfg, 1).unwrap();
    let before = teacher.state.clone();
    let t = Teacher {
        fold: 2,
        spec: &vit,
        state: &teacher.state,
    };

    let kd = train_student(&data, 2, &cnn, Some(t), &cfg, 1).unwrap();
    assert_eq!(teacher.state, before);
    assert_eq!(kd.metrics[0].beta, 1.0);
    assert_eq!(kd.metrics[1].beta, 0.0);

    let off = train_student(&data, 2, &cnn, None, &cfg, 1).unwrap();
    let zero = TrainConfig {
        kd: KdConfig {
            beta_init: 0.0,
            beta_schedule: BetaSchedule::Constant,
            ..KdConfig::default()
        },
        ..cfg.clone()
    };
    let beta0 = train_student(&data, 2, &cnn, Some(t), &zero, 1).unwrap();
    assert_eq!(off.metrics, beta0.metrics);
    assert_eq!(off.state, beta0.state);
    assert_ne!(off.state, kd.state);

    let wrong = Teacher { fold: 3, ..t };
    assert!(train_student(&data, 2, &cnn, Some(wrong), &cfg, 1).is_err());
}
