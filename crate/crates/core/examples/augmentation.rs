//! Noise and scale augmentation on one window, in both scale modes.

use prefallkd::data::augment::{axis_std, sigmoid};
use prefallkd::data::{
    augment_noise, augment_scale, AugmentConfig, LabeledWindow, ScaleMode, WindowLabel, AXES, WINDOW_LEN,
};

fn main() {
    let data = (0..WINDOW_LEN * AXES)
        .map(|i| ((i / AXES) as f32 * 0.2).sin() * (1 + i % AXES) as f32)
        .collect();
    let w = LabeledWindow {
        data,
        label: WindowLabel::PreImpactFall,
        instance_id: "S01T20R01".into(),
        start_frame: 0,
        subject_id: 1,
    };
    let cfg = AugmentConfig::default();
    let mut rng = prefallkd::rng::stream(0, "example");
    println!("sigmoid(s) = {:.6}", sigmoid(cfg.strength));

    let sigma = axis_std(&w.data);
    let noisy = augment_noise(&w, &cfg, &mut rng);
    let diff: Vec<f32> = noisy.data.iter().zip(&w.data).map(|(a, b)| a - b).collect();
    let added = axis_std(&diff);
    for a in 0..AXES {
        println!("axis {a}: std {:.4}, added noise std {:.4}", sigma[a], added[a]);
    }

    for mode in [ScaleMode::Literal, ScaleMode::Interpolated] {
        let cfg = AugmentConfig {
            scale_mode: mode,
            ..AugmentConfig::default()
        };
        let (lo, hi) = cfg.scale_factor_range();
        let scaled = augment_scale(&w, &cfg, &mut rng);
        println!(
            "{mode:?}: factor range [{lo:.6}, {hi:.6}], this draw {:.6}",
            scaled.data[AXES] / w.data[AXES]
        );
    }
}
