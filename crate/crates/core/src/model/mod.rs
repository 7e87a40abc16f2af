//! Tiny decoder-only transformer with an explicit backward pass, and the
//! synthetic corpus it trains on.

mod corpus;
mod params;
mod transformer;

use serde::{Deserialize, Serialize};

pub use corpus::{
    order2_conditional_entropy_bits, synth_corpus, unigram_entropy_bits, Corpus, MarkovSource,
    SUCCESSORS_PER_CONTEXT,
};
pub use params::{clip_global_norm, ParamSet};
pub use transformer::{Cache, Transformer};

use crate::error::{Error, Result};
use crate::numerics::{gaussian, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub seq_len: usize,
    pub tie_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            seq_len: 64,
            tie_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be >= 2".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be >= 2".into()));
        }
        if self.d_ff == 0 || self.n_layers == 0 {
            return Err(Error::Config("d_ff and n_layers must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Parameter names in construction order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["token_embedding".to_string(), "pos_embedding".to_string()];
        for l in 0..self.n_layers {
            for suffix in [
                "ln1.gain",
                "ln1.bias",
                "attn.w_q",
                "attn.w_k",
                "attn.w_v",
                "attn.w_o",
                "ln2.gain",
                "ln2.bias",
                "mlp.w_ff1",
                "mlp.w_ff2",
            ] {
                names.push(format!("layers.{l}.{suffix}"));
            }
        }
        names.push("ln_f.gain".into());
        names.push("ln_f.bias".into());
        if !self.tie_embeddings {
            names.push("head".into());
        }
        names
    }

    /// Randomly initialised parameters.
    ///
    /// Embeddings ~ N(0, 0.02^2); projections ~ N(0, 1/fan_in) with the
    /// residual outputs (`w_o`, `w_ff2`) further scaled by `1/sqrt(2 n_layers)`;
    /// norm gains 1 and biases 0.
    pub fn init_params(&self, rng: &mut Rng) -> Result<ParamSet> {
        self.validate()?;
        let d = self.d_model;
        let resid = 1.0 / ((2 * self.n_layers) as f64).sqrt();
        let mut p = ParamSet::new();
        for name in self.param_names() {
            let t = if name == "token_embedding" {
                gaussian(rng, &[self.vocab_size, d], 0.0, 0.02)?
            } else if name == "pos_embedding" {
                gaussian(rng, &[self.seq_len, d], 0.0, 0.02)?
            } else if name.ends_with(".gain") {
                Tensor::filled(&[d], 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&[d])
            } else if name.ends_with("w_o") {
                gaussian(rng, &[d, d], 0.0, resid / (d as f64).sqrt())?
            } else if name.ends_with("w_ff1") {
                gaussian(rng, &[d, self.d_ff], 0.0, 1.0 / (d as f64).sqrt())?
            } else if name.ends_with("w_ff2") {
                gaussian(rng, &[self.d_ff, d], 0.0, resid / (self.d_ff as f64).sqrt())?
            } else if name == "head" {
                gaussian(rng, &[d, self.vocab_size], 0.0, 1.0 / (d as f64).sqrt())?
            } else {
                gaussian(rng, &[d, d], 0.0, 1.0 / (d as f64).sqrt())?
            };
            p.insert(name, t)?;
        }
        Ok(p)
    }
}

/// Token windows and their next-token targets, both `batch x seq_len` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn new(batch: usize, seq_len: usize, tokens: Vec<usize>, targets: Vec<usize>) -> Result<Self> {
        if tokens.len() != batch * seq_len || targets.len() != batch * seq_len {
            return Err(Error::Shape(format!(
                "batch {batch}x{seq_len} needs {} tokens and targets",
                batch * seq_len
            )));
        }
        Ok(Batch {
            batch,
            seq_len,
            tokens,
            targets,
        })
    }

    /// Windows of `seq_len + 1` tokens starting at `starts`; targets are the shifted tokens.
    pub fn from_windows(src: &[usize], starts: &[usize], seq_len: usize) -> Result<Self> {
        let mut tokens = Vec::with_capacity(starts.len() * seq_len);
        let mut targets = Vec::with_capacity(starts.len() * seq_len);
        for &s in starts {
            if s + seq_len + 1 > src.len() {
                return Err(Error::Shape(format!("window at {s} runs past the source")));
            }
            tokens.extend_from_slice(&src[s..s + seq_len]);
            targets.extend_from_slice(&src[s + 1..s + seq_len + 1]);
        }
        Batch::new(starts.len(), seq_len, tokens, targets)
    }

    /// This batch stacked on itself.
    pub fn duplicated(&self) -> Batch {
        Batch {
            batch: self.batch * 2,
            seq_len: self.seq_len,
            tokens: [self.tokens.clone(), self.tokens.clone()].concat(),
            targets: [self.targets.clone(), self.targets.clone()].concat(),
        }
    }

    /// Rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Batch {
        let t = self.seq_len;
        let pick = |v: &[usize]| -> Vec<usize> {
            order
                .iter()
                .flat_map(|&r| v[r * t..(r + 1) * t].iter().copied())
                .collect()
        };
        Batch {
            batch: self.batch,
            seq_len: t,
            tokens: pick(&self.tokens),
            targets: pick(&self.targets),
        }
    }
}
