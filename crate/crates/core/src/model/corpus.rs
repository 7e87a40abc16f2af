use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::Batch;

/// Successors allowed after each two-token context.
pub const SUCCESSORS_PER_CONTEXT: usize = 4;

/// Order-2 Markov chain over `vocab_size` symbols with a seed-generated sparse table.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    vocab_size: usize,
    /// `vocab^2` contexts, each with `SUCCESSORS_PER_CONTEXT` (token, cumulative prob).
    table: Vec<[(usize, f64); SUCCESSORS_PER_CONTEXT]>,
}

impl MarkovSource {
    pub fn new(rng: &mut Rng, vocab_size: usize) -> Result<Self> {
        if vocab_size < SUCCESSORS_PER_CONTEXT {
            return Err(Error::InvalidArgument(format!(
                "synthetic corpus needs vocab_size >= {SUCCESSORS_PER_CONTEXT}, got {vocab_size}"
            )));
        }
        let mut table = Vec::with_capacity(vocab_size * vocab_size);
        for _ in 0..vocab_size * vocab_size {
            let mut succ = [(0usize, 0.0f64); SUCCESSORS_PER_CONTEXT];
            let mut chosen: Vec<usize> = Vec::with_capacity(SUCCESSORS_PER_CONTEXT);
            while chosen.len() < SUCCESSORS_PER_CONTEXT {
                let t = rng.below(vocab_size);
                if !chosen.contains(&t) {
                    chosen.push(t);
                }
            }
            let weights: Vec<f64> = (0..SUCCESSORS_PER_CONTEXT)
                .map(|_| 0.1 + rng.uniform())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for (slot, (&tok, &w)) in succ.iter_mut().zip(chosen.iter().zip(&weights)) {
                acc += w / total;
                *slot = (tok, acc);
            }
            succ[SUCCESSORS_PER_CONTEXT - 1].1 = 1.0;
            table.push(succ);
        }
        Ok(MarkovSource { vocab_size, table })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn next(&self, rng: &mut Rng, a: usize, b: usize) -> usize {
        let row = &self.table[a * self.vocab_size + b];
        let u = rng.uniform();
        row.iter()
            .find(|(_, c)| u < *c)
            .map_or(row[SUCCESSORS_PER_CONTEXT - 1].0, |(t, _)| *t)
    }

    pub fn sample(&self, rng: &mut Rng, n_tokens: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens.min(2) {
            out.push(rng.below(self.vocab_size));
        }
        while out.len() < n_tokens {
            let k = out.len();
            let t = self.next(rng, out[k - 2], out[k - 1]);
            out.push(t);
        }
        out
    }
}

/// Deterministic token stream from a seed-generated order-2 Markov chain.
///
/// The chain's transition table and the sampled path both come from `rng`, so
/// a given seed always yields the same corpus.
pub fn synth_corpus(rng: &mut Rng, n_tokens: usize, vocab_size: usize) -> Result<Vec<usize>> {
    if n_tokens < 2 {
        return Err(Error::InvalidArgument(format!(
            "corpus needs at least 2 tokens, got {n_tokens}"
        )));
    }
    let source = MarkovSource::new(&mut rng.derive("markov-table"), vocab_size)?;
    Ok(source.sample(&mut rng.derive("markov-path"), n_tokens))
}

/// Corpus with a held-out tail used only for evaluation.
#[derive(Debug, Clone)]
pub struct Corpus {
    tokens: Vec<usize>,
    vocab_size: usize,
    eval_start: usize,
}

impl Corpus {
    /// `eval_fraction` of the tokens at the end form the eval split.
    pub fn new(tokens: Vec<usize>, vocab_size: usize, eval_fraction: f64) -> Result<Self> {
        if tokens.iter().any(|&t| t >= vocab_size) {
            return Err(Error::InvalidArgument("token id out of vocabulary".into()));
        }
        let eval_len = ((tokens.len() as f64) * eval_fraction).round() as usize;
        let eval_start = tokens.len() - eval_len.min(tokens.len());
        Ok(Corpus {
            tokens,
            vocab_size,
            eval_start,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn train_tokens(&self) -> &[usize] {
        &self.tokens[..self.eval_start]
    }

    pub fn eval_tokens(&self) -> &[usize] {
        &self.tokens[self.eval_start..]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Random windows from the training split.
    pub fn train_batch(&self, rng: &mut Rng, batch: usize, seq_len: usize) -> Result<Batch> {
        random_windows(self.train_tokens(), rng, batch, seq_len)
    }

    /// Evenly spaced, non-random windows from the eval split.
    pub fn eval_batch(&self, index: usize, batch: usize, seq_len: usize) -> Result<Batch> {
        let src = self.eval_tokens();
        if src.len() < seq_len + 1 {
            return Err(Error::Config(format!(
                "eval split has {} tokens, needs at least {}",
                src.len(),
                seq_len + 1
            )));
        }
        let span = src.len() - seq_len - 1;
        let starts: Vec<usize> = (0..batch)
            .map(|b| {
                let k = index * batch + b;
                // golden-ratio stride spreads windows over the split
                ((k as f64 * 0.618_033_988_749_895).fract() * (span + 1) as f64) as usize
            })
            .collect();
        Batch::from_windows(src, &starts, seq_len)
    }
}

fn random_windows(src: &[usize], rng: &mut Rng, batch: usize, seq_len: usize) -> Result<Batch> {
    if src.len() < seq_len + 1 {
        return Err(Error::Config(format!(
            "training split has {} tokens, needs at least {}",
            src.len(),
            seq_len + 1
        )));
    }
    let span = src.len() - seq_len;
    let starts: Vec<usize> = (0..batch).map(|_| rng.below(span)).collect();
    Batch::from_windows(src, &starts, seq_len)
}

/// Shannon entropy in bits of the empirical unigram distribution.
pub fn unigram_entropy_bits(tokens: &[usize], vocab_size: usize) -> f64 {
    let mut counts = vec![0usize; vocab_size];
    tokens.iter().for_each(|&t| counts[t] += 1);
    entropy_bits(&counts)
}

/// Empirical `H(X_t | X_{t-2}, X_{t-1})` in bits.
pub fn order2_conditional_entropy_bits(tokens: &[usize], vocab_size: usize) -> f64 {
    let v = vocab_size;
    let mut joint = vec![0usize; v * v * v];
    for w in tokens.windows(3) {
        joint[(w[0] * v + w[1]) * v + w[2]] += 1;
    }
    let total: usize = joint.iter().sum();
    let mut h = 0.0;
    for ctx in joint.chunks(v) {
        let n: usize = ctx.iter().sum();
        if n > 0 {
            h += (n as f64 / total as f64) * entropy_bits(ctx);
        }
    }
    h
}

fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_corpus(&mut Rng::new(5), 5000, 32).unwrap();
        let b = synth_corpus(&mut Rng::new(5), 5000, 32).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(&mut Rng::new(6), 5000, 32).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_vocab_rejected() {
        assert!(synth_corpus(&mut Rng::new(0), 100, 3).is_err());
    }

    #[test]
    fn corpus_is_learnable() {
        let toks = synth_corpus(&mut Rng::new(0), 1_000_000, 32).unwrap();
        let h1 = unigram_entropy_bits(&toks, 32);
        let h2 = order2_conditional_entropy_bits(&toks, 32);
        assert!(h1 < 5.0, "unigram entropy {h1}");
        assert!(h2 < h1, "conditional {h2} vs unigram {h1}");
        assert!(h2 <= 2.0 + 1e-9, "at most 4 successors per context: {h2}");
    }

    #[test]
    fn eval_split_is_the_tail() {
        let toks: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let c = Corpus::new(toks, 4, 0.05).unwrap();
        assert_eq!(c.eval_tokens().len(), 5);
        assert_eq!(c.train_tokens().len(), 95);
    }
}
