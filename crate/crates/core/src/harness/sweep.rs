use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::run_train;
use crate::error::{Error, Result};
use crate::grouping::SchemeName;

/// Learning-rate grid swept on the `lr` axis.
pub const LR_GRID: [f64; 8] = [1e-4, 2.5e-4, 5e-4, 1e-3, 2.5e-3, 5e-3, 1e-2, 2.5e-2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Grouping,
    Lr,
    Seeds,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grouping" => Ok(SweepAxis::Grouping),
            "lr" => Ok(SweepAxis::Lr),
            "seeds" => Ok(SweepAxis::Seeds),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// One configuration of a sweep, before seeds are applied.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub config: RunConfig,
}

/// The configurations an axis enumerates.
pub fn sweep_points(base: &RunConfig, axis: SweepAxis) -> Vec<SweepPoint> {
    match axis {
        SweepAxis::Grouping => {
            let mut pts = vec![SweepPoint {
                label: "vanilla".into(),
                config: RunConfig {
                    mols_enabled: false,
                    ..base.clone()
                },
            }];
            pts.extend(SchemeName::ALL.iter().map(|&g| SweepPoint {
                label: g.as_str().into(),
                config: RunConfig {
                    mols_enabled: true,
                    grouping: g,
                    ..base.clone()
                },
            }));
            pts
        }
        SweepAxis::Lr => LR_GRID
            .iter()
            .flat_map(|&lr| {
                [false, true].map(|mols| SweepPoint {
                    label: format!("lr={lr}/{}", if mols { "mols" } else { "vanilla" }),
                    config: RunConfig {
                        lr_max: lr,
                        mols_enabled: mols,
                        ..base.clone()
                    },
                })
            })
            .collect(),
        SweepAxis::Seeds => vec![SweepPoint {
            label: if base.mols_enabled { "mols" } else { "vanilla" }.into(),
            config: base.clone(),
        }],
    }
}

/// Streaming mean and unbiased variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    pub fn std(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub grouping: SchemeName,
    pub mols_enabled: bool,
    pub lr_max: f64,
    pub seeds: Vec<u64>,
    pub final_eval_losses: Vec<f64>,
    pub stats: RunningStats,
    pub errors: Vec<String>,
}

pub const SUMMARY_CSV_HEADER: &str =
    "label,grouping,mols_enabled,lr_max,n_seeds,n_ok,final_eval_loss_mean,final_eval_loss_std,final_ppl_mean,errors";

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let errors = r.errors.join(" | ").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.grouping,
            r.mols_enabled,
            r.lr_max,
            r.seeds.len(),
            r.stats.count(),
            opt(r.stats.mean()),
            opt(r.stats.std()),
            opt(r.stats.mean().map(f64::exp)),
            errors
        );
    }
    out
}

/// Runs every point of `axis` over `base.sweep_seeds`, in parallel.
///
/// A failing child run is recorded in its row's `errors` and the sweep carries
/// on. When `base.out_dir` is set, each run writes into
/// `<out_dir>/<label>/seed<k>` and the summary goes to `<out_dir>/summary.csv`.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis) -> Result<Vec<SummaryRow>> {
    if base.sweep_seeds.is_empty() {
        return Err(Error::Config("sweep_seeds is empty".into()));
    }
    let points = sweep_points(base, axis);
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| base.sweep_seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let point = &points[p];
            let config = RunConfig {
                seed,
                out_dir: base.out_dir.as_ref().map(|d| {
                    d.join(point.label.replace(['/', '='], "_"))
                        .join(format!("seed{seed}"))
                }),
                ..point.config.clone()
            };
            let outcome = run_train(&config)?;
            let loss = outcome.final_eval_loss();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("final eval loss {loss}")));
            }
            Ok(loss)
        })
        .collect();

    let mut rows: Vec<SummaryRow> = points
        .iter()
        .map(|p| SummaryRow {
            label: p.label.clone(),
            grouping: p.config.grouping,
            mols_enabled: p.config.mols_enabled,
            lr_max: p.config.lr_max,
            seeds: Vec::new(),
            final_eval_losses: Vec::new(),
            stats: RunningStats::default(),
            errors: Vec::new(),
        })
        .collect();
    for (&(p, seed), res) in jobs.iter().zip(results) {
        let row = &mut rows[p];
        row.seeds.push(seed);
        match res {
            Ok(loss) => {
                row.final_eval_losses.push(loss);
                row.stats.push(loss);
            }
            Err(e) => row.errors.push(format!("seed {seed}: {e}")),
        }
    }
    if let Some(dir) = base.out_dir.as_deref() {
        write_summary(&rows, &dir.join("summary.csv"))?;
    }
    Ok(rows)
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, summary_to_csv(rows)).map_err(|e| Error::io(path, e))
}
