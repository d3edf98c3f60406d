//! Sliding-window labeling of a fall recording and random ADL windows.

use prefallkd::data::{build_test_set, sample_adl_windows, slide_fall_windows, ActivityKind, SensorInstance, AXES};

fn main() -> prefallkd::Result<()> {
    let fall = SensorInstance::new(
        1,
        "S01T20R01",
        ActivityKind::Fall,
        vec![0.0; 400 * AXES],
        Some((300, 360)),
    )?;
    let ws = slide_fall_windows(&fall)?;
    println!("fall: 400 frames, onset 300, impact 360 -> {} windows", ws.len());
    for w in ws.iter().filter(|w| w.start_frame >= 240) {
        println!(
            "  frames {:>3}..{:>3}  {:?}",
            w.start_frame,
            w.start_frame + 49,
            w.label
        );
    }
    let test = build_test_set(&ws);
    println!(
        "test set keeps {} of them (first three pre-impact + every ADL window)",
        test.len()
    );

    let adl = SensorInstance::new(1, "S01T01R01", ActivityKind::Adl, vec![0.0; 1000 * AXES], None)?;
    let mut rng = prefallkd::rng::stream(0, "adl/S01T01R01");
    let starts: Vec<usize> = sample_adl_windows(&adl, &mut rng)?
        .iter()
        .map(|w| w.start_frame)
        .collect();
    println!("ADL, 1000 frames: window starts {starts:?}");
    Ok(())
}
