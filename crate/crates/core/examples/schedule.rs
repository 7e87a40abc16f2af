//! Per-module learning rates over a run: warmup, ramp to alpha, cosine decay.
//!
//! cargo run --example schedule

use mols::grouping::ModuleTag;
use mols::scaling::{build_plan, module_lr, Schedule};
use mols::snr::{SnrMode, SnrReport};

fn main() -> mols::Result<()> {
    let report = SnrReport::from_values(
        SnrMode::ElementMean,
        &[
            (ModuleTag::Emb, 0.0067),
            (ModuleTag::Head, 0.04),
            (ModuleTag::QK, 0.5),
            (ModuleTag::VO, 1.0),
            (ModuleTag::MLP, 0.8),
        ],
    );
    let schedule = Schedule::new(1e-3, 2000, 0.1, 0.1)?;
    let plan = build_plan(&report, 20.0)?.with_ramp(32, schedule.warmup_steps())?;
    println!("{}", plan.to_json()?);
    let tags = [ModuleTag::Emb, ModuleTag::Head, ModuleTag::QK, ModuleTag::VO, ModuleTag::MLP];
    println!("{:>5} {}", "step", tags.map(|t| format!("{:>10}", t.to_string())).join(""));
    for t in [0, 16, 31, 32, 64, 128, 199, 200, 500, 1000, 1500, 1999] {
        let lrs: Vec<String> = tags
            .iter()
            .map(|&tag| module_lr(&plan, &schedule, t, tag).map(|x| format!("{x:>10.3e}")))
            .collect::<Result<_, _>>()?;
        println!("{t:>5} {}", lrs.join(""));
    }
    Ok(())
}
