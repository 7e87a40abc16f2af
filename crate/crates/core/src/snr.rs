//! Per-element gradient statistics and module-level signal-to-noise ratios.
//!
//! Statistics are gathered at frozen weights: each accumulated gradient is a
//! fresh draw of the stochastic gradient at the same point. The element SNR
//! is `mean^2 / (var + eps_var)` with the unbiased variance, and a module's SNR
//! is either the mean element SNR over its active elements (the default) or
//! the ratio `||mean||^2 / (sum var + eps_var)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupingScheme, ModuleTag};
use crate::model::ParamSet;

/// Variance floor in the SNR denominator.
pub const DEFAULT_EPS_VAR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SnrMode {
    #[serde(rename = "element-mean")]
    ElementMean,
    #[serde(rename = "norm-ratio")]
    NormRatio,
}

impl SnrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SnrMode::ElementMean => "element-mean",
            SnrMode::NormRatio => "norm-ratio",
        }
    }
}

impl fmt::Display for SnrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SnrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "element-mean" => Ok(SnrMode::ElementMean),
            "norm-ratio" => Ok(SnrMode::NormRatio),
            _ => Err(Error::Config(format!("unknown snr mode {s:?}"))),
        }
    }
}

/// Welford running moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Streaming mean/variance of every gradient element over micro-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    count: usize,
    tensors: Vec<TensorStats>,
}

impl GradStats {
    /// Empty accumulator shaped like `params`.
    pub fn new(params: &ParamSet) -> Self {
        GradStats {
            count: 0,
            tensors: params
                .iter()
                .map(|(n, t)| TensorStats {
                    name: n.to_string(),
                    mean: vec![0.0; t.len()],
                    m2: vec![0.0; t.len()],
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn tensors(&self) -> &[TensorStats] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorStats> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Folds one gradient draw into the running moments.
    pub fn accumulate(&mut self, grads: &ParamSet) -> Result<()> {
        if grads.len() != self.tensors.len()
            || grads
                .iter()
                .zip(&self.tensors)
                .any(|((n, t), s)| n != s.name || t.len() != s.mean.len())
        {
            return Err(Error::Shape("gradient layout differs from accumulator".into()));
        }
        grads.check_finite()?;
        self.count += 1;
        let n = self.count as f64;
        for ((_, g), s) in grads.iter().zip(self.tensors.iter_mut()) {
            for ((&x, mu), m2) in g.data().iter().zip(s.mean.iter_mut()).zip(s.m2.iter_mut()) {
                let delta = x - *mu;
                *mu += delta / n;
                *m2 += delta * (x - *mu);
            }
        }
        Ok(())
    }

    /// Combined moments of two disjoint streams (Chan et al. pairwise update).
    pub fn merge(&self, other: &GradStats) -> Result<GradStats> {
        if self.tensors.len() != other.tensors.len()
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|(a, b)| a.name != b.name || a.mean.len() != b.mean.len())
        {
            return Err(Error::Shape("cannot merge accumulators of different layouts".into()));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| {
                let mut mean = Vec::with_capacity(a.mean.len());
                let mut m2 = Vec::with_capacity(a.mean.len());
                for i in 0..a.mean.len() {
                    let delta = b.mean[i] - a.mean[i];
                    mean.push(a.mean[i] + delta * (nb / n));
                    m2.push(a.m2[i] + b.m2[i] + delta * delta * (na * nb / n));
                }
                TensorStats {
                    name: a.name.clone(),
                    mean,
                    m2,
                }
            })
            .collect();
        Ok(GradStats {
            count: self.count + other.count,
            tensors,
        })
    }

    fn require_two(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Estimation(format!(
                "variance needs at least 2 micro-batches, have {}",
                self.count
            )));
        }
        Ok(())
    }

    /// Unbiased variance of one element.
    pub fn variance(&self, tensor: usize, index: usize) -> Result<f64> {
        self.require_two()?;
        Ok(self.tensors[tensor].m2[index] / (self.count - 1) as f64)
    }

    pub fn element_snr(&self, tensor: usize, index: usize, eps_var: f64) -> Result<f64> {
        let var = self.variance(tensor, index)?;
        element_snr(self.tensors[tensor].mean[index], var, eps_var)
    }
}

/// `mean^2 / (var + eps_var)`; zero when the mean is zero.
pub fn element_snr(mean: f64, var: f64, eps_var: f64) -> Result<f64> {
    if mean == 0.0 {
        return Ok(0.0);
    }
    let denom = var.max(0.0) + eps_var;
    if denom <= 0.0 {
        return Err(Error::Estimation(
            "zero variance with zero floor gives an unbounded SNR".into(),
        ));
    }
    Ok(mean * mean / denom)
}

/// Expected Adam step under a stationary gradient with SNR `s`: `1/sqrt(1 + 1/s)`.
pub fn effective_step(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("SNR must be >= 0, got {s}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + 1.0 / s).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSnr {
    /// SNR in the report's selected mode.
    pub snr: f64,
    pub snr_element_mean: f64,
    pub snr_norm_ratio: f64,
    /// `effective_step(snr)`.
    pub effective_step: f64,
    pub n_active: usize,
    pub n_total: usize,
    /// Every active element had variance at or below the floor.
    pub noise_free: bool,
    /// No element had a nonzero mean or variance.
    pub zero_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub mode: SnrMode,
    pub micro_batches: usize,
    /// Training step at which the (frozen) statistics were collected.
    pub calibration_step: u64,
    pub eps_var: f64,
    pub modules: BTreeMap<ModuleTag, ModuleSnr>,
}

impl SnrReport {
    pub fn snr(&self, tag: ModuleTag) -> Result<f64> {
        self.modules
            .get(&tag)
            .map(|m| m.snr)
            .ok_or_else(|| Error::Estimation(format!("report has no module {tag}")))
    }

    /// Report with the given SNR values and nothing else; for tests and injection.
    pub fn from_values(mode: SnrMode, values: &[(ModuleTag, f64)]) -> Self {
        let modules = values
            .iter()
            .map(|&(tag, s)| {
                (
                    tag,
                    ModuleSnr {
                        snr: s,
                        snr_element_mean: s,
                        snr_norm_ratio: s,
                        effective_step: effective_step(s).unwrap_or(0.0),
                        n_active: usize::from(s > 0.0),
                        n_total: 1,
                        noise_free: false,
                        zero_active: s == 0.0,
                    },
                )
            })
            .collect();
        SnrReport {
            mode,
            micro_batches: 0,
            calibration_step: 0,
            eps_var: DEFAULT_EPS_VAR,
            modules,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Aggregates element statistics into one SNR per scalable module.
///
/// Elements whose mean and variance both sit at or below `eps_var` (for
/// instance embedding rows of tokens never drawn) are inactive and do not
/// enter the element-mean average.
pub fn module_snr(
    stats: &GradStats,
    scheme: &GroupingScheme,
    mode: SnrMode,
    eps_var: f64,
) -> Result<SnrReport> {
    stats.require_two()?;
    if !(eps_var >= 0.0) {
        return Err(Error::InvalidArgument("eps_var must be >= 0".into()));
    }
    struct Acc {
        sum_snr: f64,
        n_active: usize,
        n_total: usize,
        n_noisy: usize,
        mean_sq: f64,
        var_sum: f64,
    }
    let denom_n = (stats.count - 1) as f64;
    let mut accs: BTreeMap<ModuleTag, Acc> = BTreeMap::new();
    for ts in &stats.tensors {
        let tag = scheme.classify(&ts.name);
        if !tag.is_scalable() {
            continue;
        }
        let acc = accs.entry(tag).or_insert(Acc {
            sum_snr: 0.0,
            n_active: 0,
            n_total: 0,
            n_noisy: 0,
            mean_sq: 0.0,
            var_sum: 0.0,
        });
        for (&mu, &m2) in ts.mean.iter().zip(&ts.m2) {
            let var = m2 / denom_n;
            acc.n_total += 1;
            acc.mean_sq += mu * mu;
            acc.var_sum += var;
            if var > eps_var || mu.abs() > eps_var {
                acc.n_active += 1;
                acc.sum_snr += element_snr(mu, var, eps_var)?;
                if var > eps_var {
                    acc.n_noisy += 1;
                }
            }
        }
    }
    let mut modules = BTreeMap::new();
    for (tag, acc) in accs {
        if acc.n_total == 0 {
            return Err(Error::Estimation(format!("module {tag} has no elements")));
        }
        let zero_active = acc.n_active == 0;
        let em = if zero_active {
            0.0
        } else {
            acc.sum_snr / acc.n_active as f64
        };
        let nr_denom = acc.var_sum + eps_var;
        let nr = if acc.mean_sq == 0.0 {
            0.0
        } else if nr_denom > 0.0 {
            acc.mean_sq / nr_denom
        } else {
            return Err(Error::Estimation(format!(
                "module {tag}: zero variance with zero floor"
            )));
        };
        let snr = match mode {
            SnrMode::ElementMean => em,
            SnrMode::NormRatio => nr,
        };
        modules.insert(
            tag,
            ModuleSnr {
                snr,
                snr_element_mean: em,
                snr_norm_ratio: nr,
                effective_step: effective_step(snr)?,
                n_active: acc.n_active,
                n_total: acc.n_total,
                noise_free: !zero_active && acc.n_noisy == 0,
                zero_active,
            },
        );
    }
    Ok(SnrReport {
        mode,
        micro_batches: stats.count,
        calibration_step: 0,
        eps_var,
        modules,
    })
}
