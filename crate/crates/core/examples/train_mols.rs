//! Calibrate-then-train against a plain Adam baseline on the synthetic corpus.
//!
//! cargo run --release --example train_mols -- [config.json] [out_dir]

use std::path::PathBuf;

use mols::harness::{run_train, RunConfig};

fn main() -> mols::Result<()> {
    let mut args = std::env::args().skip(1);
    let base = match args.next() {
        Some(path) => RunConfig::from_json_file(path.as_ref())?,
        None => RunConfig::from_json_str(include_str!("configs/small.json"))?,
    };
    let out = args.next().map(PathBuf::from);
    for mols in [false, true] {
        let label = if mols { "mols" } else { "vanilla" };
        let config = RunConfig {
            mols_enabled: mols,
            out_dir: out.as_ref().map(|d| d.join(label)),
            ..base.clone()
        };
        let outcome = run_train(&config)?;
        let row = outcome.final_row();
        println!(
            "{label:<8} final eval loss {:.4} (ppl {:.3}), train {:.1}s, calibration {:.0} ms",
            outcome.final_eval_loss(),
            row.ppl.unwrap_or(f64::NAN),
            outcome.train_ms / 1e3,
            outcome.calibration_ms
        );
        if let Some(plan) = &outcome.plan {
            let alphas: Vec<String> = plan.alpha.iter().map(|(t, a)| format!("{t}={a:.2}")).collect();
            println!("         alpha {}", alphas.join(" "));
        }
    }
    Ok(())
}
