use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::SchemeName;
use crate::model::ModelConfig;
use crate::optim::{Hyper, OptimizerKind};
use crate::scaling::{Schedule, DEFAULT_CLAMP_MAX};
use crate::snr::SnrMode;

/// One training run. Serialized as a single flat JSON object; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Defaults to `4 * d_model`.
    pub d_ff: Option<usize>,
    pub seq_len: usize,
    pub tie_embeddings: bool,

    pub optimizer: OptimizerKind,
    pub lr_max: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub final_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
    /// Global-norm clip; 0 disables clipping.
    pub grad_clip: f64,

    pub mols_enabled: bool,
    pub calib_batches: usize,
    pub grouping: SchemeName,
    pub snr_mode: SnrMode,
    pub clamp_max: f64,
    pub eps_var: f64,

    pub corpus_tokens: usize,
    pub eval_every: usize,
    pub eval_batches: usize,
    /// When false the `wallclock_ms` column is written as 0, making
    /// `metrics.csv` byte-reproducible.
    pub record_wallclock: bool,
    /// Seeds used by `sweep`.
    pub sweep_seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            seed: 0,
            vocab_size: m.vocab_size,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: None,
            seq_len: m.seq_len,
            tie_embeddings: m.tie_embeddings,
            optimizer: OptimizerKind::Adam,
            lr_max: 2e-3,
            total_steps: 2000,
            batch_size: 32,
            warmup_fraction: 0.1,
            final_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            bias_correction: true,
            grad_clip: 1.0,
            mols_enabled: true,
            calib_batches: 32,
            grouping: SchemeName::Full,
            snr_mode: SnrMode::ElementMean,
            clamp_max: DEFAULT_CLAMP_MAX,
            eps_var: crate::snr::DEFAULT_EPS_VAR,
            corpus_tokens: 200_000,
            eval_every: 50,
            eval_batches: 4,
            record_wallclock: true,
            sweep_seeds: vec![0, 1, 2],
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            seq_len: self.seq_len,
            tie_embeddings: self.tie_embeddings,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(
            self.lr_max,
            self.total_steps,
            self.warmup_fraction,
            self.final_fraction,
        )
    }

    /// Ramp start: the calibration budget counted in training steps.
    pub fn calibration_end_step(&self) -> usize {
        self.calib_batches
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let schedule = self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.calib_batches < 2 {
            return Err(Error::Config(format!(
                "calib_batches must be >= 2 to estimate a variance, got {}",
                self.calib_batches
            )));
        }
        let warmup = schedule.warmup_steps();
        if self.mols_enabled && 2 * self.calib_batches > warmup {
            return Err(Error::Config(format!(
                "calib_batches ({}) exceeds half of the {warmup} warmup steps",
                self.calib_batches
            )));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        if !(self.clamp_max >= 1.0) {
            return Err(Error::Config("clamp_max must be >= 1".into()));
        }
        if !(self.eps_var >= 0.0) {
            return Err(Error::Config("eps_var must be >= 0".into()));
        }
        if self.vocab_size < crate::model::SUCCESSORS_PER_CONTEXT {
            return Err(Error::Config(format!(
                "vocab_size must be >= {} for the synthetic corpus",
                crate::model::SUCCESSORS_PER_CONTEXT
            )));
        }
        let eval_tokens = (self.corpus_tokens as f64 * super::EVAL_FRACTION).round() as usize;
        if eval_tokens < self.seq_len + 1 || self.corpus_tokens - eval_tokens < self.seq_len + 1 {
            return Err(Error::Config(format!(
                "corpus_tokens ({}) too small for seq_len {}",
                self.corpus_tokens, self.seq_len
            )));
        }
        if self.eval_every == 0 || self.eval_batches == 0 {
            return Err(Error::Config("eval_every and eval_batches must be >= 1".into()));
        }
        Ok(())
    }
}
