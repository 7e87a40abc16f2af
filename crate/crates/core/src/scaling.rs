//! Relative rescaling factors from an SNR report, the warmup + cosine base
//! schedule, and the linear ramp that moves each module from 1 to its factor
//! over the remainder of warmup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupingScheme, ModuleTag};
use crate::model::ParamSet;
use crate::snr::SnrReport;

pub const DEFAULT_CLAMP_MAX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub base_tag: ModuleTag,
    pub alpha: BTreeMap<ModuleTag, f64>,
    /// First step of the ramp.
    pub t_cal: usize,
    /// End of warmup; the full factor applies from here on.
    pub t_w: usize,
    pub clamp_max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `alpha_m = sqrt(S_base / S_m)` against the highest-SNR module.
///
/// Ties for the reference go to the earliest tag in `ModuleTag` order. Factors
/// are clamped to `[1/clamp_max, clamp_max]`; modules without any active
/// element keep 1.0 and add a warning. The ramp window starts empty; set it
/// with [`ScalingPlan::with_ramp`].
pub fn build_plan(report: &SnrReport, clamp_max: f64) -> Result<ScalingPlan> {
    if !(clamp_max >= 1.0) || !clamp_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "clamp_max must be finite and >= 1, got {clamp_max}"
        )));
    }
    let mut base: Option<(ModuleTag, f64)> = None;
    for (&tag, m) in &report.modules {
        if !tag.is_scalable() || !(m.snr >= 0.0) {
            continue;
        }
        if base.is_none_or(|(_, s)| m.snr > s) {
            base = Some((tag, m.snr));
        }
    }
    let (base_tag, s_base) = match base {
        Some((t, s)) if s > 0.0 => (t, s),
        _ => {
            return Err(Error::Estimation(
                "every module reports zero SNR; cannot pick a reference".into(),
            ))
        }
    };
    let mut alpha = BTreeMap::new();
    let mut warnings = Vec::new();
    for (&tag, m) in &report.modules {
        let a = if !tag.is_scalable() || tag == base_tag {
            1.0
        } else if m.zero_active {
            warnings.push(format!("{tag}: no active elements, factor left at 1"));
            1.0
        } else if m.snr == 0.0 {
            clamp_max
        } else {
            (s_base / m.snr).sqrt().clamp(1.0 / clamp_max, clamp_max)
        };
        alpha.insert(tag, a);
    }
    Ok(ScalingPlan {
        base_tag,
        alpha,
        t_cal: 0,
        t_w: 0,
        clamp_max,
        warnings,
    })
}

impl ScalingPlan {
    /// Plan with every factor 1 (vanilla training).
    pub fn identity() -> Self {
        ScalingPlan {
            base_tag: ModuleTag::VO,
            alpha: BTreeMap::new(),
            t_cal: 0,
            t_w: 0,
            clamp_max: DEFAULT_CLAMP_MAX,
            warnings: Vec::new(),
        }
    }

    pub fn with_ramp(mut self, t_cal: usize, t_w: usize) -> Result<Self> {
        if t_cal > t_w {
            return Err(Error::Config(format!(
                "ramp start {t_cal} is after warmup end {t_w}"
            )));
        }
        self.t_cal = t_cal;
        self.t_w = t_w;
        Ok(self)
    }

    pub fn alpha(&self, tag: ModuleTag) -> f64 {
        self.alpha.get(&tag).copied().unwrap_or(1.0)
    }

    /// Multiplier on the base schedule for `tag` at step `t`.
    pub fn ramp(&self, t: usize, tag: ModuleTag) -> f64 {
        let a = self.alpha(tag);
        if t < self.t_cal {
            1.0
        } else if t < self.t_w {
            let frac = (t - self.t_cal) as f64 / (self.t_w - self.t_cal) as f64;
            1.0 + (a - 1.0) * frac
        } else {
            a
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Linear warmup from 0 to `lr_max`, then cosine decay to `final_fraction * lr_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_max: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub final_fraction: f64,
}

impl Schedule {
    pub fn new(lr_max: f64, total_steps: usize, warmup_fraction: f64, final_fraction: f64) -> Result<Self> {
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "warmup_fraction must be in (0, 1), got {warmup_fraction}"
            )));
        }
        if !(final_fraction > 0.0 && final_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "final_fraction must be in (0, 1], got {final_fraction}"
            )));
        }
        if !(lr_max >= 0.0) || !lr_max.is_finite() {
            return Err(Error::Config(format!("lr_max must be >= 0, got {lr_max}")));
        }
        if total_steps < 2 {
            return Err(Error::Config("total_steps must be >= 2".into()));
        }
        Ok(Schedule {
            lr_max,
            total_steps,
            warmup_fraction,
            final_fraction,
        })
    }

    /// `round(warmup_fraction * T)`, kept within `[1, T-1]`.
    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).round() as usize)
            .clamp(1, self.total_steps - 1)
    }

    pub fn base_lr(&self, t: usize) -> Result<f64> {
        if t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let tw = self.warmup_steps();
        if t < tw {
            return Ok(self.lr_max * t as f64 / tw as f64);
        }
        let span = (self.total_steps - 1 - tw).max(1) as f64;
        let progress = (t - tw) as f64 / span;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        Ok(self.lr_max * (self.final_fraction + (1.0 - self.final_fraction) * cos))
    }
}

/// `base_lr(t) * ramp(t, tag)`.
pub fn module_lr(plan: &ScalingPlan, schedule: &Schedule, t: usize, tag: ModuleTag) -> Result<f64> {
    Ok(schedule.base_lr(t)? * plan.ramp(t, tag))
}

/// Final factor for every parameter, by its tag under `scheme`.
pub fn plan_to_param_multipliers(
    plan: &ScalingPlan,
    scheme: &GroupingScheme,
    params: &ParamSet,
) -> BTreeMap<String, f64> {
    params
        .names()
        .map(|n| (n.to_string(), plan.alpha(scheme.classify(n))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::SchemeName;
    use crate::model::ModelConfig;
    use crate::numerics::Rng;
    use crate::snr::{effective_step, SnrMode};

    fn report(values: &[(ModuleTag, f64)]) -> SnrReport {
        SnrReport::from_values(SnrMode::ElementMean, values)
    }

    #[test]
    fn two_module_plan() {
        let p = build_plan(&report(&[(ModuleTag::VO, 4.0), (ModuleTag::Emb, 1.0)]), 20.0).unwrap();
        assert_eq!(p.base_tag, ModuleTag::VO);
        assert_eq!(p.alpha(ModuleTag::VO), 1.0);
        assert_eq!(p.alpha(ModuleTag::Emb), 2.0);
    }

    #[test]
    fn equal_snr_gives_unit_factors() {
        use ModuleTag::*;
        let p = build_plan(
            &report(&[(Emb, 0.3), (Head, 0.3), (QK, 0.3), (VO, 0.3), (MLP, 0.3)]),
            20.0,
        )
        .unwrap();
        assert_eq!(p.base_tag, Emb);
        assert!(p.alpha.values().all(|&a| a == 1.0));
        let p = build_plan(&report(&[(VO, 2.0), (MLP, 2.0), (Emb, 0.1)]), 20.0).unwrap();
        assert_eq!(p.base_tag, VO);
    }

    #[test]
    fn llama_magnitude_example() {
        let p = build_plan(&report(&[(ModuleTag::VO, 1.0), (ModuleTag::Emb, 0.0067)]), 20.0).unwrap();
        assert!((p.alpha(ModuleTag::Emb) - 12.2).abs() < 0.05);
    }

    #[test]
    fn zero_report_rejected_and_zero_module_warned() {
        assert!(build_plan(&report(&[(ModuleTag::VO, 0.0), (ModuleTag::Emb, 0.0)]), 20.0).is_err());
        let p = build_plan(&report(&[(ModuleTag::VO, 1.0), (ModuleTag::Head, 0.0)]), 20.0).unwrap();
        assert_eq!(p.alpha(ModuleTag::Head), 1.0);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn clamp_applies() {
        let p = build_plan(&report(&[(ModuleTag::VO, 1.0), (ModuleTag::Emb, 1e-6)]), 20.0).unwrap();
        assert_eq!(p.alpha(ModuleTag::Emb), 20.0);
        assert!(build_plan(&report(&[(ModuleTag::VO, 1.0)]), 0.5).is_err());
    }

    #[test]
    fn alpha_decreases_with_module_snr() {
        let mut last = f64::INFINITY;
        for s in [0.001, 0.01, 0.1, 0.5, 0.9] {
            let p = build_plan(&report(&[(ModuleTag::VO, 1.0), (ModuleTag::MLP, s)]), 1e6).unwrap();
            let a = p.alpha(ModuleTag::MLP);
            assert!(a < last);
            last = a;
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::new(1e-3, 1000, 0.1, 0.1).unwrap();
        let plan = build_plan(&report(&[(ModuleTag::VO, 4.0), (ModuleTag::Emb, 1.0)]), 20.0)
            .unwrap()
            .with_ramp(20, s.warmup_steps())
            .unwrap();
        for tag in [ModuleTag::Emb, ModuleTag::VO, ModuleTag::Norm] {
            assert_eq!(module_lr(&plan, &s, 0, tag).unwrap(), 0.0);
        }
        let tw = s.warmup_steps();
        assert_eq!(tw, 100);
        assert!((module_lr(&plan, &s, tw, ModuleTag::Emb).unwrap() - 2e-3).abs() < 1e-18);
        assert_eq!(module_lr(&plan, &s, tw, ModuleTag::VO).unwrap(), 1e-3);
        let last = module_lr(&plan, &s, 999, ModuleTag::VO).unwrap();
        assert!((last - 1e-4).abs() < 1e-15);
        assert!(module_lr(&plan, &s, 1000, ModuleTag::VO).is_err());
    }

    #[test]
    fn ramp_midpoint() {
        let mut plan = ScalingPlan::identity().with_ramp(10, 30).unwrap();
        plan.alpha.insert(ModuleTag::Head, 3.0);
        assert_eq!(plan.ramp(20, ModuleTag::Head), 2.0);
        assert_eq!(plan.ramp(9, ModuleTag::Head), 1.0);
        assert_eq!(plan.ramp(30, ModuleTag::Head), 3.0);
        assert!(ScalingPlan::identity().with_ramp(5, 4).is_err());
    }

    #[test]
    fn param_multipliers_follow_tags() {
        let params = ModelConfig::default().init_params(&mut Rng::new(0)).unwrap();
        let scheme = GroupingScheme::new(SchemeName::Full);
        let mut plan = ScalingPlan::identity();
        plan.alpha.insert(ModuleTag::Emb, 2.5);
        plan.alpha.insert(ModuleTag::VO, 1.0);
        let m = plan_to_param_multipliers(&plan, &scheme, &params);
        assert_eq!(m["layers.0.attn.w_v"], 1.0);
        assert_eq!(m["token_embedding"], 2.5);
        assert_eq!(m.len(), params.len());
        assert!(params.names().all(|n| m.contains_key(n)));
    }

    #[test]
    fn low_snr_equilibrium() {
        for (sm, sb) in [(1e-4, 1e-2), (1e-3, 5e-3), (2e-3, 2e-3)] {
            let p = build_plan(&report(&[(ModuleTag::VO, sb), (ModuleTag::Emb, sm)]), 1e6).unwrap();
            let ratio = p.alpha(ModuleTag::Emb) * effective_step(sm).unwrap()
                / effective_step(sb).unwrap();
            assert!((0.99..=1.01).contains(&ratio), "{ratio}");
        }
    }
}
