//! Monte-Carlo measurement of Adam's mean update under a stationary Gaussian
//! gradient `g ~ N(mu, sigma^2)`.
//!
//! Only the moment recursions run (raw form, no bias correction, no weights),
//! so the measured quantity is exactly the time average of `m / (sqrt(v) + eps)`
//! once `v` has reached its stationary regime. Draws are generated as
//! `sign(mu) * (|mu| + sigma * z)` with `z` standard normal, so negating `mu`
//! under a fixed seed negates the whole gradient stream.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng};
use crate::snr::effective_step;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu: f64,
    pub sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub burn_in: usize,
    pub measure: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            mu: 1.0,
            sigma: 1.0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            burn_in: 2000,
            measure: 100_000,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// `mu^2 / sigma^2`; infinite when noise-free.
    pub fn snr(&self) -> f64 {
        if self.sigma == 0.0 {
            f64::INFINITY
        } else {
            self.mu * self.mu / (self.sigma * self.sigma)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need finite mu and sigma >= 0, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        if self.sigma == 0.0 && self.mu == 0.0 {
            return Err(Error::InvalidArgument(
                "mu and sigma are both zero; the SNR is undefined".into(),
            ));
        }
        if self.measure == 0 {
            return Err(Error::InvalidArgument("measure must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        let needed = 10.0 / (1.0 - self.beta2);
        if (self.burn_in as f64) < needed {
            return Err(Error::InvalidArgument(format!(
                "burn_in {} is shorter than 10/(1-beta2) = {needed}",
                self.burn_in
            )));
        }
        Ok(())
    }
}

/// Analytic effective step with the sign of `mu`.
pub fn analytic_step(mu: f64, sigma: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let s = if sigma == 0.0 {
        f64::INFINITY
    } else {
        (mu / sigma).powi(2)
    };
    mu.signum() * effective_step(s).unwrap_or(0.0)
}

/// Returns `(D_empirical, D_analytic)` for one seed.
pub fn measure_effective_step(spec: &NoiseSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (b1, b2) = (spec.beta1, spec.beta2);
    let mut m = 0.0;
    let mut v = 0.0;
    let dir = if spec.mu < 0.0 { -1.0 } else { 1.0 };
    let magnitude = spec.mu.abs();
    let mut draw = |rng: &mut Rng| {
        let g = dir * (magnitude + spec.sigma * rng.standard_normal());
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * (g * g);
        m / (v.sqrt() + spec.eps)
    };
    for _ in 0..spec.burn_in {
        draw(&mut rng);
    }
    // incremental mean: exact when every sample is identical
    let mut mean = 0.0;
    for k in 1..=spec.measure {
        let u = draw(&mut rng);
        mean += (u - mean) / k as f64;
    }
    if !mean.is_finite() {
        return Err(Error::NonFinite("noise-lab average".into()));
    }
    Ok((mean, analytic_step(spec.mu, spec.sigma)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr: f64,
    pub d_empirical: f64,
    pub d_analytic: f64,
    pub rel_err: f64,
    pub seed_count: usize,
}

/// Seed of the `seed_index`-th replicate at grid point `point`.
pub fn point_seed(master: u64, point: usize, seed_index: usize) -> u64 {
    derive_seed(master, &format!("noiselab/{point}/{seed_index}"))
}

/// For each `S`, sets `mu = sqrt(S)`, `sigma = 1` and averages `seed_count`
/// replicates. `defaults.seed` is the master seed.
pub fn sweep(snr_values: &[f64], defaults: &NoiseSpec, seed_count: usize) -> Result<Vec<SweepRow>> {
    if seed_count == 0 {
        return Err(Error::InvalidArgument("seed_count must be >= 1".into()));
    }
    if let Some(s) = snr_values.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "SNR grid values must be positive, got {s}"
        )));
    }
    snr_values
        .par_iter()
        .enumerate()
        .map(|(point, &s)| {
            let mut total = 0.0;
            let mut analytic = 0.0;
            for k in 0..seed_count {
                let spec = NoiseSpec {
                    mu: s.sqrt(),
                    sigma: 1.0,
                    seed: point_seed(defaults.seed, point, k),
                    ..*defaults
                };
                let (d, a) = measure_effective_step(&spec)?;
                total += d;
                analytic = a;
            }
            let d_empirical = total / seed_count as f64;
            Ok(SweepRow {
                snr: s,
                d_empirical,
                d_analytic: analytic,
                rel_err: (d_empirical - analytic).abs() / analytic,
                seed_count,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "S,D_empirical,D_analytic,rel_err,seed_count";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.snr, r.d_empirical, r.d_analytic, r.rel_err, r.seed_count
        );
    }
    out
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    std::fs::write(path, sweep_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_is_sign_descent() {
        let spec = NoiseSpec {
            mu: 1.0,
            sigma: 0.0,
            ..NoiseSpec::default()
        };
        let (d, a) = measure_effective_step(&spec).unwrap();
        // the EMA recursions settle on a floating-point fixed point within an ulp of 1
        assert!((d - 1.0 / (1.0 + spec.eps)).abs() <= 4.0 * f64::EPSILON, "{d}");
        assert_eq!(a, 1.0);
    }

    #[test]
    fn zero_signal_averages_to_zero() {
        let spec = NoiseSpec {
            mu: 0.0,
            ..NoiseSpec::default()
        };
        let (d, a) = measure_effective_step(&spec).unwrap();
        assert!(d.abs() < 0.02, "{d}");
        assert_eq!(a, 0.0);
    }

    #[test]
    fn sign_flip_is_exact() {
        let pos = NoiseSpec {
            mu: 0.3,
            seed: 9,
            measure: 10_000,
            ..NoiseSpec::default()
        };
        let neg = NoiseSpec { mu: -0.3, ..pos };
        let (dp, ap) = measure_effective_step(&pos).unwrap();
        let (dn, an) = measure_effective_step(&neg).unwrap();
        assert_eq!(dp, -dn);
        assert_eq!(ap, -an);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let zero = NoiseSpec {
            mu: 0.0,
            sigma: 0.0,
            ..NoiseSpec::default()
        };
        assert!(measure_effective_step(&zero).is_err());
        let short = NoiseSpec {
            burn_in: 100,
            ..NoiseSpec::default()
        };
        assert!(measure_effective_step(&short).is_err());
        assert!(sweep(&[1.0, -1.0], &NoiseSpec::default(), 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = sweep(&[1.0], &NoiseSpec { measure: 1000, ..NoiseSpec::default() }, 2).unwrap();
        let csv = sweep_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_CSV_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 5);
    }
}
