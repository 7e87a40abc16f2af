//! Seeded, platform-independent random streams.
//!
//! The generator is ChaCha8 keyed by `seed` through `SeedableRng::seed_from_u64`
//! (which expands the seed with PCG32, as documented by `rand_core`). Uniforms
//! take the top 53 bits of `next_u64`, and normals use the Box–Muller
//! transform with both outputs consumed in order. Child streams are derived by
//! hashing `(seed, label)` with FNV-1a followed by the SplitMix64 finalizer.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream named `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; depends only on the root seed and `label`.
    pub fn derive(&self, label: &str) -> Rng {
        Rng::new(derive_seed(self.seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box–Muller.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}

/// I.i.d. `N(mean, std^2)` samples.
pub fn gaussian(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian std must be finite and >= 0, got {std}"
        )));
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(mean, std)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_distribution() {
        let mut rng = Rng::new(1);
        let t = gaussian(&mut rng, &[4], 3.0, 0.0).unwrap();
        assert_eq!(t.data(), &[3.0; 4]);
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = Rng::new(1);
        assert!(gaussian(&mut rng, &[4], 0.0, -1.0).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian(&mut Rng::new(42), &[3, 5], 0.0, 1.0).unwrap();
        let b = gaussian(&mut Rng::new(42), &[3, 5], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derived_streams_differ() {
        let root = Rng::new(7);
        let mut a = root.derive("a");
        let mut b = root.derive("b");
        let xa: Vec<u64> = (0..10_000).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..10_000).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
        assert_eq!(root.derive("a").next_u64(), xa[0]);
    }

    #[test]
    fn moments_of_a_million_normals() {
        let mut rng = Rng::new(2024);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            assert!(rng.below(7) < 7);
        }
    }
}
