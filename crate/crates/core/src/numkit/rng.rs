//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, counter)`: the uniform generator is
//! the SplitMix64 output function applied to `seed + (counter + 1) * GOLDEN`.
//! Standard normals come in Box–Muller pairs, each pair consuming two
//! consecutive counters. Because nothing depends on call history, a stream can
//! be split into disjoint counter ranges and generated in parallel with results
//! identical to a sequential pass.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent stream keyed by a master seed and a path of identifiers,
    /// e.g. `(master, [tag, iteration, worker, segment])`.
    pub fn derive(master_seed: u64, ids: &[u64]) -> Self {
        let mut h = mix64(master_seed ^ 0x5A0A_C5EE_D000_0001);
        for &id in ids {
            h = mix64(h ^ mix64(id.wrapping_add(GOLDEN)));
        }
        Self::new(h)
    }

    #[inline]
    fn raw_at(seed: u64, counter: u64) -> u64 {
        mix64(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let x = Self::raw_at(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(1);
        x
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_open01(self.next_u64())
    }

    /// Uniform on `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Uniform integer in `0..bound` by 128-bit multiply-shift. `bound` must be
    /// nonzero; the bias is below `bound / 2^64`.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// A single standard normal. Consumes one Box–Muller pair and discards the
    /// sine branch.
    pub fn next_gaussian(&mut self) -> f64 {
        let (z0, _) = gaussian_pair(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(2);
        z0
    }

    /// Fills `out` with i.i.d. standard normals. Odd lengths still consume a
    /// whole pair for the last element.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(2) {
            let (z0, z1) = gaussian_pair(self.seed, self.counter);
            self.counter = self.counter.wrapping_add(2);
            chunk[0] = z0;
            if let Some(slot) = chunk.get_mut(1) {
                *slot = z1;
            }
        }
    }

    pub fn gaussian_sample(&mut self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill_gaussian(&mut out);
        out
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[inline]
fn to_open01(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
}

/// Box–Muller pair generated from counters `counter` and `counter + 1`.
#[inline]
pub(crate) fn gaussian_pair(seed: u64, counter: u64) -> (f64, f64) {
    let u1 = to_open01(RngStream::raw_at(seed, counter));
    let u2 = to_open01(RngStream::raw_at(seed, counter.wrapping_add(1)));
    let r = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (r * angle.cos(), r * angle.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn same_seed_and_counter_repeat() {
        let a = RngStream { seed: 7, counter: 3 }.gaussian_sample(8);
        let b = RngStream { seed: 7, counter: 3 }.gaussian_sample(8);
        assert_eq!(a, b);
    }

    #[test]
    fn counter_advances_by_pairs() {
        let mut s = RngStream::new(1);
        s.gaussian_sample(5);
        assert_eq!(s.counter, 6);
        s.next_u64();
        assert_eq!(s.counter, 7);
    }

    #[test]
    fn split_generation_matches_sequential() {
        let mut whole = RngStream::new(99);
        let all = whole.gaussian_sample(10);
        let mut first = RngStream::new(99);
        let a = first.gaussian_sample(4);
        let b = first.gaussian_sample(6);
        assert_eq!(all[..4], a[..]);
        assert_eq!(all[4..], b[..]);
    }

    #[test]
    fn million_draws_are_standard_normal() {
        let xs = RngStream::new(2024).gaussian_sample(1_000_000);
        let (mean, std) = mean_std(&xs);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((std - 1.0).abs() < 0.01, "std {std}");
    }

    #[test]
    fn derived_streams_are_uncorrelated() {
        let a = RngStream::derive(11, &[0]).gaussian_sample(100_000);
        let b = RngStream::derive(11, &[1]).gaussian_sample(100_000);
        let (ma, sa) = mean_std(&a);
        let (mb, sb) = mean_std(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / a.len() as f64;
        let corr = cov / (sa * sb);
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn derive_is_path_sensitive() {
        assert_ne!(RngStream::derive(1, &[2, 3]), RngStream::derive(1, &[3, 2]));
        assert_eq!(RngStream::derive(1, &[2, 3]), RngStream::derive(1, &[2, 3]));
    }

    #[test]
    fn next_below_stays_in_range() {
        let mut s = RngStream::new(5);
        for _ in 0..10_000 {
            assert!(s.next_below(17) < 17);
        }
    }
}
