//! The CNN student: feature-map sizes, a training-mode forward pass that
//! updates batch-norm statistics, and eval-mode inference.

use prefallkd::models::{CnnSpec, ModelSpec, ModelState};
use prefallkd::tensor::{Mode, Tape};

fn main() -> prefallkd::Result<()> {
    let spec = CnnSpec::default();
    println!("frames x axes per stage: {:?}", spec.spatial_trajectory()?);
    println!("flattened features: {}", spec.flat_features());

    let model = ModelSpec::Cnn(spec);
    let mut rng = prefallkd::rng::stream(3, "example");
    let mut state: ModelState<f32> = model.build(&mut rng)?;
    let batch: Vec<f32> = (0..8 * 450).map(|i| ((i % 97) as f32 / 48.0) - 1.0).collect();

    let mut tape = Tape::new();
    let vars = state.register(&mut tape, true);
    let out = model.forward(&mut tape, &state, &vars, &batch, Mode::Train, &mut rng)?;
    for (name, stats) in &out.bn_updates {
        println!(
            "{name}: running mean[0] {:.4}, running var[0] {:.4}",
            stats.mean[0], stats.var[0]
        );
    }
    state.apply_bn_updates(out.bn_updates);

    state.set_mode(Mode::Eval);
    let lp = model.infer(&state, &batch[..2 * 450])?;
    println!("eval log-probs {:?}", lp.data());
    Ok(())
}
