use serde::Serialize;

use crate::error::Result;
use crate::model::{Batch, ModelConfig, ParamSet, Transformer};
use crate::numerics::Rng;

/// Worst disagreement between analytic and central-difference gradients in one tensor.
#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_abs_err: f64,
    /// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`.
    pub max_rel_err: f64,
}

/// Small model used by the `gradcheck` command.
pub fn gradcheck_config(vocab_size: usize, d_model: usize, n_layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model,
        n_heads: 2,
        n_layers,
        d_ff: 4 * d_model,
        seq_len: 6,
        tie_embeddings: false,
    }
}

/// Random weights and a random batch for `config`, derived from `seed`.
pub fn random_point(config: &ModelConfig, seed: u64, batch: usize) -> Result<(ParamSet, Batch)> {
    let root = Rng::new(seed);
    let mut params = config.init_params(&mut root.derive("init"))?;
    // move norms and small embeddings away from their special initial values
    let mut jitter = root.derive("jitter");
    for (_, t) in params.iter_mut() {
        for x in t.data_mut() {
            *x += 0.1 * jitter.standard_normal();
        }
    }
    let mut data = root.derive("tokens");
    let n = batch * config.seq_len;
    let tokens = (0..n).map(|_| data.below(config.vocab_size)).collect();
    let targets = (0..n).map(|_| data.below(config.vocab_size)).collect();
    Ok((params, Batch::new(batch, config.seq_len, tokens, targets)?))
}

/// Compares every gradient element with a central difference of step `h`.
pub fn gradcheck(
    model: &Transformer,
    params: &ParamSet,
    batch: &Batch,
    h: f64,
) -> Result<Vec<TensorCheck>> {
    let (_, analytic) = model.loss_and_grad(params, batch)?;
    let mut probe = params.clone();
    let mut out = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let len = probe.get(&name).map_or(0, |t| t.len());
        let a = analytic.get(&name).expect("gradient for every parameter").data().to_vec();
        let mut max_abs = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..len {
            let orig = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let plus = model.forward(&probe, batch)?.0;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let minus = model.forward(&probe, batch)?.0;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_abs = max_abs.max((a[i] - numeric).abs());
            scale = scale.max(a[i].abs()).max(numeric.abs());
        }
        out.push(TensorCheck {
            name,
            max_abs_err: max_abs,
            max_rel_err: if scale > 0.0 { max_abs / scale } else { max_abs },
        });
    }
    Ok(out)
}
