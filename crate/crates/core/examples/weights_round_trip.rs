//! Saves a student, reloads it, and shows that a flipped byte is caught.

use prefallkd::cli::{load_model, save_model, WeightContainer, WeightMeta};
use prefallkd::models::{CnnSpec, ModelSpec, ModelState};
use prefallkd::tensor::Mode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pfkd_weights_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("student.pfkd");

    let spec = ModelSpec::Cnn(CnnSpec::default());
    let mut state: ModelState<f32> = spec.build(&mut prefallkd::rng::stream(5, "example"))?;
    state.set_mode(Mode::Eval);
    let meta = WeightMeta {
        spec: spec.clone(),
        role: "student".into(),
        fold: Some(0),
        seed: 5,
        config: String::new(),
    };
    save_model(&path, &state, &meta)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} bytes to {}", bytes.len(), path.display());

    let (m, mut back) = load_model(&path, Some(&spec))?;
    back.set_mode(Mode::Eval);
    let x: Vec<f32> = (0..450).map(|i| (i as f32 * 0.1).cos()).collect();
    let same = spec.infer(&state, &x)? == spec.infer(&back, &x)?;
    println!(
        "role {}, fold {:?}, identical outputs after reload: {same}",
        m.role, m.fold
    );
    println!(
        "re-encoded bytes identical: {}",
        WeightContainer::load(&path)?.to_bytes() == bytes
    );

    let mut bad = bytes;
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    match WeightContainer::from_bytes(&bad) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    Ok(())
}
