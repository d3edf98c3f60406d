//! Parameter counts, per-layer FLOPs, and estimated MCU latency of both
//! models.

use prefallkd::eval::{mcu_latency_ms, McuModel};
use prefallkd::models::{count_flops, count_params, CnnSpec, ModelSpec, ModelState, VitSpec};

fn main() -> prefallkd::Result<()> {
    let mcu = McuModel::default();
    let mut rng = prefallkd::rng::stream(0, "example");
    for spec in [ModelSpec::Vit(VitSpec::default()), ModelSpec::Cnn(CnnSpec::default())] {
        let state: ModelState<f32> = spec.build(&mut rng)?;
        let params = count_params(&state);
        let flops = count_flops(&spec);
        println!(
            "{:?}: {} parameters ({} bytes)",
            spec.kind(),
            params.count,
            params.bytes_at_32bit
        );
        for layer in &flops.layers {
            println!("  {:<28} {:>10}", layer.name, layer.flops);
        }
        println!(
            "  total {} FLOPs -> {:.1} ms at {:.1} MFLOP/s\n",
            flops.total,
            mcu_latency_ms(flops.total, &mcu),
            mcu.flops_per_second / 1e6
        );
    }
    println!("{}", count_flops(&ModelSpec::Cnn(CnnSpec::default())).conventions);
    Ok(())
}
