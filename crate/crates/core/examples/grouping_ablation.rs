//! Vanilla Adam against the four grouping schemes, seeds 0-2.
//!
//! cargo run --release --example grouping_ablation -- [config.json] [out_dir]

use std::path::PathBuf;

use mols::harness::{run_sweep, summary_to_csv, RunConfig, SweepAxis};

fn main() -> mols::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut base = match args.next() {
        Some(path) => RunConfig::from_json_file(path.as_ref())?,
        None => RunConfig::from_json_str(include_str!("configs/small.json"))?,
    };
    base.out_dir = args.next().map(PathBuf::from);
    let rows = run_sweep(&base, SweepAxis::Grouping)?;
    print!("{}", summary_to_csv(&rows));
    Ok(())
}
