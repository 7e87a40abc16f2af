//! One-shot SNR calibration at the initial weights, in both estimation modes,
//! and the resulting learning-rate factors.
//!
//! cargo run --release --example calibrate -- [config.json]

use mols::harness::{run_calibrate, RunConfig};
use mols::snr::SnrMode;

fn main() -> mols::Result<()> {
    let base = match std::env::args().nth(1) {
        Some(path) => RunConfig::from_json_file(path.as_ref())?,
        None => RunConfig::default(),
    };
    for mode in [SnrMode::ElementMean, SnrMode::NormRatio] {
        let cal = run_calibrate(&RunConfig {
            snr_mode: mode,
            ..base.clone()
        })?;
        println!("mode {} ({:.0} ms)", mode.as_str(), cal.elapsed_ms);
        println!("  {:<5} {:>11} {:>8} {:>7}", "tag", "snr", "D(snr)", "alpha");
        for (tag, m) in &cal.report.modules {
            println!(
                "  {:<5} {:>11.4e} {:>8.4} {:>7.3}",
                tag.to_string(),
                m.snr,
                m.effective_step,
                cal.plan.alpha(*tag)
            );
        }
        println!("  reference module: {}", cal.plan.base_tag);
    }
    Ok(())
}
