//! Module-wise learning-rate scaling driven by gradient signal-to-noise ratios.
//!
//! The crate measures, once and at frozen weights, the per-element gradient
//! SNR of each functional module of a transformer (embedding, head, query/key,
//! value/output, MLP), turns the module averages into relative learning-rate
//! factors `sqrt(S_base / S_m)`, and ramps those factors in over the rest of
//! warmup on top of a warmup + cosine schedule. Adam itself is untouched.
//!
//! | module | contents |
//! |---|---|
//! | [`numerics`] | rank-2 `f64` tensors, seeded RNG |
//! | [`model`] | toy decoder-only transformer with a hand-written backward pass, synthetic Markov corpus |
//! | [`grouping`] | parameter name to module tag, grouping granularities |
//! | [`optim`] | Adam, SignGD, Adam-mini-lite |
//! | [`snr`] | Welford gradient statistics, module SNR, effective step |
//! | [`scaling`] | rescaling plan, schedule, ramp |
//! | [`noiselab`] | Monte-Carlo check of Adam's effective step against SNR |
//! | [`harness`] | configs, training runs, calibration, sweeps |

pub mod error;
pub mod grouping;
pub mod harness;
pub mod model;
pub mod noiselab;
pub mod numerics;
pub mod optim;
pub mod scaling;
pub mod snr;

pub use error::{Error, Result};
