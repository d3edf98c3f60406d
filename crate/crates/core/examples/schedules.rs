//! Learning-rate warmup and cosine decay, and the three beta schedules.

use prefallkd::train::{beta_at, lr_at, BetaSchedule, KdConfig, OptimConfig, StepPlan};

fn main() -> prefallkd::Result<()> {
    let optim = OptimConfig::default();
    let steps_per_epoch = 20;
    let plan = StepPlan::new(optim.teacher_epochs, steps_per_epoch, optim.warmup_epochs);
    println!("{} steps, {} warmup", plan.total_steps, plan.warmup_steps);
    for epoch in [0, 1, 5, 10, 50, 100, 149] {
        let step = epoch * steps_per_epoch;
        println!("epoch {epoch:>3}  lr {:.6}", lr_at(step, plan, &optim));
    }
    println!("last step  lr {:.2e}", lr_at(plan.total_steps - 1, plan, &optim));

    let epochs = 10;
    for schedule in [BetaSchedule::Linear, BetaSchedule::Exponential, BetaSchedule::Constant] {
        let cfg = KdConfig {
            beta_schedule: schedule,
            ..KdConfig::default()
        };
        let betas = (0..epochs)
            .map(|e| beta_at(e, epochs, &cfg))
            .collect::<prefallkd::Result<Vec<_>>>()?;
        let shown: Vec<String> = betas.iter().map(|b| format!("{b:.2}")).collect();
        println!("{schedule:?}: {}", shown.join(" "));
    }
    Ok(())
}
