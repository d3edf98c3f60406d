//! Patch layout and an eval-mode forward pass through the ViT teacher.

use prefallkd::models::{count_params, patchify, ModelSpec, ModelState, VitSpec};
use prefallkd::tensor::Mode;

fn main() -> prefallkd::Result<()> {
    let spec = VitSpec::default();
    let p = &spec.patch;
    println!(
        "window {}x{}, patches {}x{} -> {} tokens of {} values, sequence {} with the class token",
        p.length,
        p.axes,
        p.patch_length,
        p.patch_axes,
        p.num_patches(),
        p.patch_dim(),
        spec.seq_len()
    );

    // frame-major window where each value encodes (frame, axis)
    let w: Vec<f32> = (0..p.window_len()).map(|i| ((i / 9) * 100 + i % 9) as f32).collect();
    let patches = patchify(&w, p)?;
    println!("first patch: {:?}", &patches[..p.patch_dim()]);

    let model = ModelSpec::Vit(spec);
    let mut state: ModelState<f32> = model.build(&mut prefallkd::rng::stream(0, "example"))?;
    state.set_mode(Mode::Eval);
    println!("parameters: {}", count_params(&state).count);

    let batch: Vec<f32> = (0..4 * 450).map(|i| ((i as f32) * 0.37).sin()).collect();
    let lp = model.infer(&state, &batch)?;
    for (b, row) in lp.data().chunks(2).enumerate() {
        println!("window {b}: P(adl) {:.4}  P(fall) {:.4}", row[0].exp(), row[1].exp());
    }
    Ok(())
}
