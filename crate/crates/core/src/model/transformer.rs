use crate::error::{Error, Result};
use crate::numerics::{matmul_a_bt_into, matmul_at_b_acc, matmul_into};

use super::{Batch, ModelConfig, ParamSet};

const LN_EPS: f64 = 1e-5;

/// Pre-norm decoder: `x += Attn(LN1(x)); x += MLP(LN2(x))`, final LN, linear head.
///
/// Attention is causal multi-head softmax attention without biases; the MLP is
/// `ReLU(h W_ff1) W_ff2`. Positions use a learned absolute embedding.
#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
}

/// Activations retained by [`Transformer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    fingerprint: u64,
    batch: Batch,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    probs: Vec<f64>,
    position_losses: Vec<f64>,
    loss: f64,
}

impl Cache {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Cross-entropy at every (row, position), row-major.
    pub fn position_losses(&self) -> &[f64] {
        &self.position_losses
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], n: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[i * d + j] = xh;
            y[i * d + j] = gain[j] * xh + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dgain` and `dbias`.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    n: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rs = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl Transformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Transformer { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, params: &ParamSet, batch: &Batch) -> Result<()> {
        let c = &self.config;
        if batch.seq_len > c.seq_len {
            return Err(Error::Shape(format!(
                "batch seq_len {} exceeds model seq_len {}",
                batch.seq_len, c.seq_len
            )));
        }
        if batch
            .tokens
            .iter()
            .chain(&batch.targets)
            .any(|&t| t >= c.vocab_size)
        {
            return Err(Error::InvalidArgument("token id out of vocabulary".into()));
        }
        for name in c.param_names() {
            if params.get(&name).is_none() {
                return Err(Error::Shape(format!("missing parameter {name}")));
            }
        }
        if params.len() != c.param_names().len() {
            return Err(Error::Shape("unexpected extra parameters".into()));
        }
        Ok(())
    }

    /// Mean token-level cross-entropy over every position of every row.
    pub fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, Cache)> {
        self.check_inputs(params, batch)?;
        let c = &self.config;
        let (bsz, t_len, d, nh, dh, dff, vocab) = (
            batch.batch,
            batch.seq_len,
            c.d_model,
            c.n_heads,
            c.head_dim(),
            c.d_ff,
            c.vocab_size,
        );
        let n = bsz * t_len;
        let scale = 1.0 / (dh as f64).sqrt();

        let emb = params.expect("token_embedding").data();
        let pos = params.expect("pos_embedding").data();
        let mut x = vec![0.0; n * d];
        for i in 0..n {
            let tok = batch.tokens[i];
            let t = i % t_len;
            for j in 0..d {
                x[i * d + j] = emb[tok * d + j] + pos[t * d + j];
            }
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for l in 0..c.n_layers {
            let p = |s: &str| params.expect(&format!("layers.{l}.{s}")).data();
            let (h1, ln1) = layer_norm(&x, p("ln1.gain"), p("ln1.bias"), n, d);
            let mut q = vec![0.0; n * d];
            let mut k = vec![0.0; n * d];
            let mut v = vec![0.0; n * d];
            matmul_into(&h1, p("attn.w_q"), &mut q, n, d, d);
            matmul_into(&h1, p("attn.w_k"), &mut k, n, d, d);
            matmul_into(&h1, p("attn.w_v"), &mut v, n, d, d);

            let mut att = vec![0.0; bsz * nh * t_len * t_len];
            let mut o = vec![0.0; n * d];
            for b in 0..bsz {
                for h in 0..nh {
                    let off = h * dh;
                    for t in 0..t_len {
                        let i = b * t_len + t;
                        let qi = &q[i * d + off..i * d + off + dh];
                        let arow = &mut att[((b * nh + h) * t_len + t) * t_len..][..t_len];
                        let mut maxs = f64::NEG_INFINITY;
                        for j in 0..=t {
                            let kj = &k[(b * t_len + j) * d + off..][..dh];
                            let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                            arow[j] = s;
                            maxs = maxs.max(s);
                        }
                        let mut z = 0.0;
                        for a in arow[..=t].iter_mut() {
                            *a = (*a - maxs).exp();
                            z += *a;
                        }
                        for a in arow[..=t].iter_mut() {
                            *a /= z;
                        }
                        let oi = &mut o[i * d + off..i * d + off + dh];
                        for j in 0..=t {
                            let vj = &v[(b * t_len + j) * d + off..][..dh];
                            let a = arow[j];
                            oi.iter_mut().zip(vj).for_each(|(o, v)| *o += a * v);
                        }
                    }
                }
            }
            let mut proj = vec![0.0; n * d];
            matmul_into(&o, p("attn.w_o"), &mut proj, n, d, d);
            add_into(&mut x, &proj);

            let (h2, ln2) = layer_norm(&x, p("ln2.gain"), p("ln2.bias"), n, d);
            let mut u = vec![0.0; n * dff];
            matmul_into(&h2, p("mlp.w_ff1"), &mut u, n, d, dff);
            let r: Vec<f64> = u.iter().map(|&z| z.max(0.0)).collect();
            matmul_into(&r, p("mlp.w_ff2"), &mut proj, n, dff, d);
            add_into(&mut x, &proj);

            layers.push(LayerCache {
                ln1,
                h1,
                q,
                k,
                v,
                att,
                o,
                ln2,
                h2,
                u,
                r,
            });
        }

        let (hf, lnf) = layer_norm(
            &x,
            params.expect("ln_f.gain").data(),
            params.expect("ln_f.bias").data(),
            n,
            d,
        );
        let mut logits = vec![0.0; n * vocab];
        if c.tie_embeddings {
            matmul_a_bt_into(&hf, emb, &mut logits, n, d, vocab);
        } else {
            matmul_into(&hf, params.expect("head").data(), &mut logits, n, d, vocab);
        }

        let mut position_losses = vec![0.0; n];
        for i in 0..n {
            let row = &mut logits[i * vocab..(i + 1) * vocab];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
            position_losses[i] = -row[batch.targets[i]].ln();
        }
        let loss = position_losses.iter().sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("forward loss is {loss}")));
        }

        Ok((
            loss,
            Cache {
                fingerprint: params.fingerprint(),
                batch: batch.clone(),
                layers,
                lnf,
                hf,
                probs: logits,
                position_losses,
                loss,
            },
        ))
    }

    /// Exact gradients of the mean loss with respect to every parameter.
    pub fn backward(&self, params: &ParamSet, cache: &Cache) -> Result<ParamSet> {
        if cache.fingerprint != params.fingerprint() || cache.layers.len() != self.config.n_layers
        {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        let c = &self.config;
        let batch = &cache.batch;
        let (bsz, t_len, d, nh, dh, dff, vocab) = (
            batch.batch,
            batch.seq_len,
            c.d_model,
            c.n_heads,
            c.head_dim(),
            c.d_ff,
            c.vocab_size,
        );
        let n = bsz * t_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut grads = params.zeros_like();

        let mut dlogits = cache.probs.clone();
        for i in 0..n {
            dlogits[i * vocab + batch.targets[i]] -= 1.0;
        }
        let inv_n = 1.0 / n as f64;
        dlogits.iter_mut().for_each(|g| *g *= inv_n);

        let mut dhf = vec![0.0; n * d];
        if c.tie_embeddings {
            let emb = params.expect("token_embedding").data();
            matmul_at_b_acc(
                &dlogits,
                &cache.hf,
                grads.expect_mut("token_embedding").data_mut(),
                n,
                vocab,
                d,
            );
            matmul_into(&dlogits, emb, &mut dhf, n, vocab, d);
        } else {
            let head = params.expect("head").data();
            matmul_at_b_acc(
                &cache.hf,
                &dlogits,
                grads.expect_mut("head").data_mut(),
                n,
                d,
                vocab,
            );
            matmul_a_bt_into(&dlogits, head, &mut dhf, n, vocab, d);
        }

        let mut dx = {
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let dx = layer_norm_backward(
                &dhf,
                &cache.lnf,
                params.expect("ln_f.gain").data(),
                &mut dgain,
                &mut dbias,
                n,
                d,
            );
            add_into(grads.expect_mut("ln_f.gain").data_mut(), &dgain);
            add_into(grads.expect_mut("ln_f.bias").data_mut(), &dbias);
            dx
        };

        for l in (0..c.n_layers).rev() {
            let lc = &cache.layers[l];
            let name = |s: &str| format!("layers.{l}.{s}");
            let p = |s: &str| params.expect(&name(s)).data();

            // MLP residual branch
            matmul_at_b_acc(
                &lc.r,
                &dx,
                grads.expect_mut(&name("mlp.w_ff2")).data_mut(),
                n,
                dff,
                d,
            );
            let mut du = vec![0.0; n * dff];
            matmul_a_bt_into(&dx, p("mlp.w_ff2"), &mut du, n, d, dff);
            du.iter_mut()
                .zip(&lc.u)
                .for_each(|(g, &z)| if z <= 0.0 { *g = 0.0 });
            matmul_at_b_acc(
                &lc.h2,
                &du,
                grads.expect_mut(&name("mlp.w_ff1")).data_mut(),
                n,
                d,
                dff,
            );
            let mut dh2 = vec![0.0; n * d];
            matmul_a_bt_into(&du, p("mlp.w_ff1"), &mut dh2, n, dff, d);
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let dln2 = layer_norm_backward(&dh2, &lc.ln2, p("ln2.gain"), &mut dgain, &mut dbias, n, d);
            add_into(grads.expect_mut(&name("ln2.gain")).data_mut(), &dgain);
            add_into(grads.expect_mut(&name("ln2.bias")).data_mut(), &dbias);
            add_into(&mut dx, &dln2);

            // attention residual branch
            matmul_at_b_acc(
                &lc.o,
                &dx,
                grads.expect_mut(&name("attn.w_o")).data_mut(),
                n,
                d,
                d,
            );
            let mut dout = vec![0.0; n * d];
            matmul_a_bt_into(&dx, p("attn.w_o"), &mut dout, n, d, d);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut da = vec![0.0; t_len];
            for b in 0..bsz {
                for h in 0..nh {
                    let off = h * dh;
                    for t in 0..t_len {
                        let i = b * t_len + t;
                        let arow = &lc.att[((b * nh + h) * t_len + t) * t_len..][..t_len];
                        let doi = &dout[i * d + off..i * d + off + dh];
                        let mut dot = 0.0;
                        for j in 0..=t {
                            let jr = (b * t_len + j) * d + off;
                            let vj = &lc.v[jr..jr + dh];
                            da[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            dot += arow[j] * da[j];
                            let a = arow[j];
                            dv[jr..jr + dh]
                                .iter_mut()
                                .zip(doi)
                                .for_each(|(g, x)| *g += a * x);
                        }
                        let qi: Vec<f64> = lc.q[i * d + off..i * d + off + dh].to_vec();
                        for j in 0..=t {
                            let ds = arow[j] * (da[j] - dot) * scale;
                            let jr = (b * t_len + j) * d + off;
                            for e in 0..dh {
                                dq[i * d + off + e] += ds * lc.k[jr + e];
                                dk[jr + e] += ds * qi[e];
                            }
                        }
                    }
                }
            }

            let mut dh1 = vec![0.0; n * d];
            let mut tmp = vec![0.0; n * d];
            for (g, w, src) in [
                ("attn.w_q", "attn.w_q", &dq),
                ("attn.w_k", "attn.w_k", &dk),
                ("attn.w_v", "attn.w_v", &dv),
            ] {
                matmul_at_b_acc(&lc.h1, src, grads.expect_mut(&name(g)).data_mut(), n, d, d);
                matmul_a_bt_into(src, p(w), &mut tmp, n, d, d);
                add_into(&mut dh1, &tmp);
            }
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let dln1 = layer_norm_backward(&dh1, &lc.ln1, p("ln1.gain"), &mut dgain, &mut dbias, n, d);
            add_into(grads.expect_mut(&name("ln1.gain")).data_mut(), &dgain);
            add_into(grads.expect_mut(&name("ln1.bias")).data_mut(), &dbias);
            add_into(&mut dx, &dln1);
        }

        {
            let demb = grads.expect_mut("token_embedding").data_mut();
            for i in 0..n {
                let tok = batch.tokens[i];
                add_into(&mut demb[tok * d..(tok + 1) * d], &dx[i * d..(i + 1) * d]);
            }
        }
        {
            let dpos = grads.expect_mut("pos_embedding").data_mut();
            for i in 0..n {
                let t = i % t_len;
                add_into(&mut dpos[t * d..(t + 1) * d], &dx[i * d..(i + 1) * d]);
            }
        }
        grads.check_finite()?;
        Ok(grads)
    }

    /// Forward + backward in one call.
    pub fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
        let (loss, cache) = self.forward(params, batch)?;
        let grads = self.backward(params, &cache)?;
        Ok((loss, grads))
    }
}
