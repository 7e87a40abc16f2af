//! Adam, SignGD and a block-shared second-moment Adam ("Adam-mini-lite"),
//! all driven by per-module learning-rate multipliers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupingScheme, ModuleTag};
use crate::model::ParamSet;
use crate::numerics::{sign, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "signgd")]
    SignGd,
    #[serde(rename = "adam-mini-lite")]
    AdamMiniLite,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SignGd => "signgd",
            OptimizerKind::AdamMiniLite => "adam-mini-lite",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            OptimizerKind::Adam,
            OptimizerKind::SignGd,
            OptimizerKind::AdamMiniLite,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub beta1: f64,
    pub beta2: f64,
    /// Added outside the square root of the second moment.
    pub eps: f64,
    /// Decoupled decay, scaled by the same per-module learning rate as the update.
    pub weight_decay: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-step inputs: scheduled base learning rate and per-module multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub lr: f64,
    /// Missing tags use 1.0.
    pub multipliers: BTreeMap<ModuleTag, f64>,
    pub bias_correction: bool,
}

impl StepConfig {
    pub fn new(lr: f64) -> Self {
        StepConfig {
            lr,
            multipliers: BTreeMap::new(),
            bias_correction: true,
        }
    }

    pub fn with_multiplier(mut self, tag: ModuleTag, value: f64) -> Self {
        self.multipliers.insert(tag, value);
        self
    }

    pub fn raw_moments(mut self) -> Self {
        self.bias_correction = false;
        self
    }

    pub fn multiplier(&self, tag: ModuleTag) -> f64 {
        self.multipliers.get(&tag).copied().unwrap_or(1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if let Some((t, m)) = self
            .multipliers
            .iter()
            .find(|(_, m)| !(**m > 0.0) || !m.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "multiplier for {t} must be positive, got {m}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SecondMoment {
    Elementwise(Tensor),
    Shared(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub tag: ModuleTag,
    pub m: Tensor,
    pub v: SecondMoment,
}

/// Moments for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub step: u64,
    pub slots: Vec<Slot>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyper, scheme: &GroupingScheme, params: &ParamSet) -> Self {
        let slots = params
            .iter()
            .map(|(name, t)| Slot {
                name: name.to_string(),
                tag: scheme.classify(name),
                m: Tensor::zeros(t.shape()),
                v: match kind {
                    OptimizerKind::AdamMiniLite => SecondMoment::Shared(0.0),
                    _ => SecondMoment::Elementwise(Tensor::zeros(t.shape())),
                },
            })
            .collect();
        OptimizerState {
            kind,
            hyper,
            step: 0,
            slots,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Dispatches on `kind`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, cfg: &StepConfig) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => adam_step(self, params, grads, cfg),
            OptimizerKind::SignGd => signgd_step(self, params, grads, cfg),
            OptimizerKind::AdamMiniLite => adam_mini_lite_step(self, params, grads, cfg),
        }
    }

    fn check(&self, params: &ParamSet, grads: &ParamSet, cfg: &StepConfig) -> Result<()> {
        cfg.validate()?;
        if !params.same_layout(grads) || params.len() != self.slots.len() {
            return Err(Error::Shape("parameters, gradients and state disagree".into()));
        }
        if self
            .slots
            .iter()
            .zip(params.names())
            .any(|(s, n)| s.name != n)
        {
            return Err(Error::Shape("optimizer state built for other parameters".into()));
        }
        grads.check_finite()
    }
}

fn bias_factors(hyper: &Hyper, step: u64, on: bool) -> (f64, f64) {
    if on {
        let t = step as i32;
        (1.0 - hyper.beta1.powi(t), 1.0 - hyper.beta2.powi(t))
    } else {
        (1.0, 1.0)
    }
}

fn non_finite(name: &str) -> Error {
    Error::NonFinite(format!("update for {name}"))
}

/// Adam with decoupled decay:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `w <- w - lr*lambda * m_hat/(sqrt(v_hat)+eps) - lr*lambda*wd * w`.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &ParamSet,
    cfg: &StepConfig,
) -> Result<()> {
    state.check(params, grads, cfg)?;
    let h = state.hyper;
    let step = state.step + 1;
    let (c1, c2) = bias_factors(&h, step, cfg.bias_correction);
    let mut next = params.clone();
    let mut slots = state.slots.clone();
    for (slot, ((_, w), (_, g))) in slots.iter_mut().zip(next.iter_mut().zip(grads.iter())) {
        let lr = cfg.lr * cfg.multiplier(slot.tag);
        let SecondMoment::Elementwise(v) = &mut slot.v else {
            return Err(Error::InvalidArgument("adam_step needs elementwise state".into()));
        };
        for (((w, &g), m), v) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(slot.m.data_mut())
            .zip(v.data_mut())
        {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * (g * g);
            let u = (*m / c1) / ((*v / c2).sqrt() + h.eps);
            if !u.is_finite() {
                return Err(non_finite(&slot.name));
            }
            *w = *w - lr * u - lr * h.weight_decay * *w;
        }
    }
    next.check_finite()?;
    *params = next;
    state.slots = slots;
    state.step = step;
    Ok(())
}

/// `w <- w - lr*lambda * sign(g)`.
pub fn signgd_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &ParamSet,
    cfg: &StepConfig,
) -> Result<()> {
    state.check(params, grads, cfg)?;
    let tags: Vec<ModuleTag> = state.slots.iter().map(|s| s.tag).collect();
    for (tag, ((_, w), (_, g))) in tags.into_iter().zip(params.iter_mut().zip(grads.iter())) {
        let lr = cfg.lr * cfg.multiplier(tag);
        for (w, &g) in w.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * sign(g);
        }
    }
    state.step += 1;
    Ok(())
}

/// Adam with one second-moment scalar per tensor: `v <- b2 v + (1-b2) mean(g^2)`.
pub fn adam_mini_lite_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &ParamSet,
    cfg: &StepConfig,
) -> Result<()> {
    state.check(params, grads, cfg)?;
    let h = state.hyper;
    let step = state.step + 1;
    let (c1, c2) = bias_factors(&h, step, cfg.bias_correction);
    let mut next = params.clone();
    let mut slots = state.slots.clone();
    for (slot, ((_, w), (_, g))) in slots.iter_mut().zip(next.iter_mut().zip(grads.iter())) {
        let lr = cfg.lr * cfg.multiplier(slot.tag);
        let SecondMoment::Shared(v) = &mut slot.v else {
            return Err(Error::InvalidArgument(
                "adam_mini_lite_step needs shared state".into(),
            ));
        };
        let mean_sq = g.data().iter().map(|&x| x * x).sum::<f64>() / g.len() as f64;
        *v = h.beta2 * *v + (1.0 - h.beta2) * mean_sq;
        let denom = (*v / c2).sqrt() + h.eps;
        for ((w, &g), m) in w.data_mut().iter_mut().zip(g.data()).zip(slot.m.data_mut()) {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            let u = (*m / c1) / denom;
            if !u.is_finite() {
                return Err(non_finite(&slot.name));
            }
            *w = *w - lr * u - lr * h.weight_decay * *w;
        }
    }
    next.check_finite()?;
    *params = next;
    state.slots = slots;
    state.step = step;
    Ok(())
}
