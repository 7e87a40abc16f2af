//! Central-difference check of the hand-written transformer backward pass.
//!
//! cargo run --example gradcheck

use mols::harness::{gradcheck, gradcheck_config, random_point};
use mols::model::Transformer;

fn main() -> mols::Result<()> {
    for (vocab, tied) in [(8, false), (2, false), (8, true)] {
        let config = mols::model::ModelConfig {
            tie_embeddings: tied,
            ..gradcheck_config(vocab, 8, 2)
        };
        let model = Transformer::new(config.clone())?;
        let (params, batch) = random_point(&config, 0, 2)?;
        let checks = gradcheck(&model, &params, &batch, 1e-5)?;
        let worst = checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
        println!(
            "vocab {vocab:>2} tied {tied:<5}: {} tensors, worst {} rel {:.2e}",
            checks.len(),
            worst.name,
            worst.max_rel_err
        );
    }
    Ok(())
}
