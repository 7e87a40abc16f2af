//! Monte-Carlo check of Adam's effective step `D = 1/sqrt(1 + 1/S)`.
//!
//! cargo run --example noise_lab -- [measure_steps]

use mols::noiselab::{sweep, NoiseSpec};

fn main() -> mols::Result<()> {
    let measure = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("measure_steps must be an integer"))
        .unwrap_or(100_000);
    let grid = [1e-4, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e4];
    let spec = NoiseSpec {
        measure,
        ..NoiseSpec::default()
    };
    let rows = sweep(&grid, &spec, 3)?;
    println!("{:>8} {:>12} {:>12} {:>9}", "S", "D_empirical", "D_analytic", "rel_err");
    for r in rows {
        println!("{:>8} {:>12.6} {:>12.6} {:>9.4}", r.snr, r.d_empirical, r.d_analytic, r.rel_err);
    }
    Ok(())
}
