//! Deterministic random streams.
//!
//! All randomness flows from a single root seed. Independent streams are
//! derived by mixing the root with a stream tag through splitmix64, so the
//! result never depends on how work is split across workers.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; mixes a seed and a tag into a new 64-bit seed.
pub fn split_seed(root: u64, tag: u64) -> u64 {
    let mut z = root ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded stream with the sampling helpers the crate needs.
pub struct SplitRng {
    inner: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(root: u64, tag: u64) -> Self {
        SplitRng {
            inner: ChaCha8Rng::seed_from_u64(split_seed(root, tag)),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal via Box–Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1: f64 = loop {
            let u = self.inner.random::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = self.inner.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn gaussian_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.gaussian())
    }

    pub fn gaussian_matrix(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.gaussian())
    }

    /// Uniform sample in the closed unit ball of dimension n.
    pub fn unit_ball(&mut self, n: usize) -> DVector<f64> {
        if n == 0 {
            return DVector::zeros(0);
        }
        let mut d = self.gaussian_vector(n);
        let norm = d.norm();
        if norm < 1e-300 {
            return DVector::zeros(n);
        }
        d /= norm;
        let r = self.unit().powf(1.0 / n as f64);
        d * r
    }
}
