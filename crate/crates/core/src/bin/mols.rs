use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mols::harness::{self, RunConfig, SweepAxis};
use mols::model::Transformer;
use mols::noiselab::{self, NoiseSpec};
use mols::{Error, Result};

/// Gradient-SNR module-wise learning-rate scaling on a toy transformer.
#[derive(Parser)]
#[command(name = "mols", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate (when enabled) and train; writes metrics.csv and friends.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the SNR report and scaling plan at initialization only.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep of Adam's effective step over an SNR grid.
    Noiselab {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
        snr_grid: Vec<f64>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 100_000)]
        measure: usize,
        #[arg(long, default_value_t = 2000)]
        burn_in: usize,
        #[arg(long, default_value_t = 0.9)]
        beta1: f64,
        #[arg(long, default_value_t = 0.95)]
        beta2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every parameter gradient on a small model.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        vocab: usize,
        #[arg(long, default_value_t = 8)]
        d_model: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Run a grouping, learning-rate or seed sweep and write summary.csv.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut c = RunConfig::from_json_file(config)?;
    if out.is_some() {
        c.out_dir = out;
    }
    if c.out_dir.is_none() {
        c.out_dir = Some(PathBuf::from("runs/default"));
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let c = load(&config, out)?;
            let outcome = harness::run_train(&c)?;
            let row = outcome.final_row();
            println!(
                "step {} train_loss {:.4} eval_loss {:.4} -> {}",
                row.step,
                row.train_loss,
                outcome.final_eval_loss(),
                c.out_dir.unwrap().display()
            );
        }
        Command::Calibrate { config, out } => {
            let c = load(&config, out)?;
            let cal = harness::run_calibrate(&c)?;
            println!("{:<6} {:>12} {:>12} {:>9} {:>9} {:>8}", "module", "snr", "norm-ratio", "active", "total", "alpha");
            for (tag, m) in &cal.report.modules {
                println!(
                    "{:<6} {:>12.4e} {:>12.4e} {:>9} {:>9} {:>8.3}",
                    tag.to_string(),
                    m.snr_element_mean,
                    m.snr_norm_ratio,
                    m.n_active,
                    m.n_total,
                    cal.plan.alpha(*tag)
                );
            }
            println!("base module: {}", cal.plan.base_tag);
        }
        Command::Noiselab {
            snr_grid,
            out,
            seeds,
            measure,
            burn_in,
            beta1,
            beta2,
            seed,
        } => {
            let defaults = NoiseSpec {
                beta1,
                beta2,
                burn_in,
                measure,
                seed,
                ..NoiseSpec::default()
            };
            let rows = noiselab::sweep(&snr_grid, &defaults, seeds)?;
            noiselab::write_sweep_csv(&rows, &out)?;
            print!("{}", noiselab::sweep_to_csv(&rows));
        }
        Command::Gradcheck {
            vocab,
            d_model,
            layers,
            seed,
            tolerance,
        } => {
            let mc = harness::gradcheck_config(vocab, d_model, layers);
            let model = Transformer::new(mc.clone())?;
            let (params, batch) = harness::random_point(&mc, seed, 2)?;
            let checks = harness::gradcheck(&model, &params, &batch, 1e-5)?;
            let mut worst = 0.0f64;
            for c in &checks {
                println!("{:<24} rel {:.3e}  abs {:.3e}", c.name, c.max_rel_err, c.max_abs_err);
                worst = worst.max(c.max_rel_err);
            }
            if worst >= tolerance {
                return Err(Error::NonFinite(format!(
                    "gradient check failed: max relative error {worst:.3e} >= {tolerance:.1e}"
                )));
            }
            println!("ok: max relative error {worst:.3e}");
        }
        Command::Sweep { axis, config, out } => {
            let axis: SweepAxis = axis.parse()?;
            let c = load(&config, out)?;
            let rows = harness::run_sweep(&c, axis)?;
            print!("{}", harness::summary_to_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
