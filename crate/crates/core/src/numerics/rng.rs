use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const CHILD_SALT: u64 = 0xD1B5_4A32_D192_ED03;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based 64-bit generator (the SplitMix64 output function).
///
/// Draw `i` (1-based) is `mix64(seed + i·γ)` with wrapping arithmetic, so a
/// stream is fully described by `(seed, counter)` and any port that
/// implements `mix64` reproduces it bit for bit.
///
/// A stream is single-owner. Independent consumers should take a child
/// stream from [`RandomStream::derive`] instead of sharing one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Seed of the child stream labelled `tag`. Does not advance `self`.
    pub fn child_seed(&self, tag: u64) -> u64 {
        mix64(
            self.seed
                .wrapping_add(GAMMA.wrapping_mul(tag.wrapping_add(1)))
                ^ CHILD_SALT,
        )
    }

    /// A fresh stream for an independent consumer, keyed by `tag`.
    pub fn derive(&self, tag: u64) -> RandomStream {
        RandomStream::new(self.child_seed(tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        if v < hi {
            v
        } else {
            hi.next_down()
        }
    }

    /// Uniform integer in `[0, n)`; `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One Box–Muller pair of standard normals from two consecutive uniforms
    /// `u1, u2`: `r = sqrt(-2 ln(1 - u1))`, returns `(r cos 2πu2, r sin 2πu2)`.
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fisher–Yates shuffle, walking from the last index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `n` uniform draws in `[lo, hi)`.
pub fn sample_uniform(stream: &mut RandomStream, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    ensure!(lo < hi, "sample_uniform needs lo < hi, got [{lo}, {hi})");
    Ok((0..n).map(|_| stream.uniform(lo, hi)).collect())
}

/// `n` draws from `N(mean, variance)`.
///
/// Draws are produced in Box–Muller pairs (cosine then sine); for odd `n`
/// the sine half of the final pair is discarded. `variance == 0` returns
/// `mean` exactly, still advancing the stream.
pub fn sample_normal(
    stream: &mut RandomStream,
    mean: f64,
    variance: f64,
    n: usize,
) -> Result<Vec<f64>> {
    ensure!(
        variance >= 0.0 && variance.is_finite(),
        "sample_normal needs a finite variance >= 0, got {variance}"
    );
    let sd = variance.sqrt();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, b) = stream.standard_normal_pair();
        out.push(mean + sd * a);
        if out.len() < n {
            out.push(mean + sd * b);
        }
    }
    Ok(out)
}
