//! Counter-based random streams.
//!
//! Every stream is identified by a `(master seed, stream id)` pair and a
//! 64-bit counter. Output `k` of a stream is
//!
//! ```text
//! key   = mix64(seed ^ mix64(stream + 0x9E3779B97F4A7C15))
//! out_k = mix64(key + k * 0x9E3779B97F4A7C15)        k = 1, 2, ...
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer. Child streams are derived from
//! the parent's id and a label, never from its counter, so derivation is
//! stateless: `s.derive(7)` yields the same child no matter how many values
//! `s` has produced.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream labels, kept in one place so that the event and
/// censoring branches can never collide.
pub mod label {
    pub const COVARIATES: u64 = 0x11;
    pub const EVENT: u64 = 0x22;
    pub const CENSOR: u64 = 0x33;
    pub const CALIBRATION: u64 = 0x44;
    pub const SPEC: u64 = 0x55;
    pub const TASK: u64 = 0x66;
    pub const SPLIT: u64 = 0x77;
    pub const INIT: u64 = 0x88;
    pub const TARGETS: u64 = 0x99;
    pub const BOOTSTRAP: u64 = 0xAA;
    pub const KMEANS: u64 = 0xBB;
    pub const WEIGHTS: u64 = 0xCC;
    pub const NOISE: u64 = 0xDD;
    pub const SELECT: u64 = 0xEE;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by `label`; independent of this stream's position.
    pub fn derive(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(label ^ 0xD134_2543_DE82_EF95)),
            counter: 0,
        }
    }

    /// Shorthand for a two-level derivation, e.g. `(TASK, index)`.
    pub fn derive2(&self, label: u64, index: u64) -> Self {
        self.derive(label).derive(index)
    }

    #[inline]
    fn key(&self) -> u64 {
        mix64(self.seed ^ mix64(self.stream.wrapping_add(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key().wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Log-uniform on `[lo, hi]`, both positive.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * self.uniform()).exp()
    }

    /// Standard normal via Box-Muller; consumes exactly two outputs.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn proportionally to nonnegative `weights`. The caller
    /// guarantees a positive total.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding can leave u marginally above the last weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
