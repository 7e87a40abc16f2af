//! Adam, SignGD and Adam-mini-lite on the same short run, each with and
//! without module-wise scaling.
//!
//! cargo run --release --example optimizers

use mols::harness::RunConfig;
use mols::optim::OptimizerKind;

fn main() -> mols::Result<()> {
    let base = RunConfig {
        total_steps: 600,
        calib_batches: 16,
        ..RunConfig::from_json_str(include_str!("configs/small.json"))?
    };
    for (kind, lr) in [
        (OptimizerKind::Adam, 5e-3),
        (OptimizerKind::SignGd, 5e-4),
        (OptimizerKind::AdamMiniLite, 5e-3),
    ] {
        for mols in [false, true] {
            let outcome = mols::harness::run_train(&RunConfig {
                optimizer: kind,
                lr_max: lr,
                mols_enabled: mols,
                ..base.clone()
            })?;
            println!(
                "{:<15} mols={:<5} final eval loss {:.4}",
                kind.as_str(),
                mols,
                outcome.final_eval_loss()
            );
        }
    }
    Ok(())
}
