//! Shared standard-Gaussian noise table.
//!
//! Workers exchange offsets into the table instead of perturbation vectors.
//! Slices for different offsets may overlap; at table sizes far above the
//! parameter dimension the induced correlation is negligible.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gaussian_pair, RngStream};

pub const DEFAULT_TABLE_SIZE: usize = 25_000_000;

/// Entries generated per parallel work item (even, so pairs never straddle).
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseIndex(pub usize);

/// Immutable table of standard normals, cheap to clone and share.
#[derive(Debug, Clone)]
pub struct NoiseTable {
    seed: u64,
    dim: usize,
    values: Arc<[f64]>,
}

impl NoiseTable {
    /// Entry `i` equals the `i`-th draw of `RngStream::new(seed).fill_gaussian`,
    /// so the table is regenerable bit-exactly from `(seed, size)`.
    pub fn create(seed: u64, size: usize, dim: usize) -> Result<Self> {
        if size < dim || dim == 0 {
            return Err(Error::NoiseTableTooSmall { size, dim });
        }
        let mut values = vec![0.0; size];
        values
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = (c * CHUNK) as u64;
                for (k, pair) in chunk.chunks_mut(2).enumerate() {
                    let (z0, z1) = gaussian_pair(seed, base + 2 * k as u64);
                    pair[0] = z0;
                    if let Some(slot) = pair.get_mut(1) {
                        *slot = z1;
                    }
                }
            });
        Ok(Self {
            seed,
            dim,
            values: values.into(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parameter dimension the table serves.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest valid offset.
    pub fn max_offset(&self) -> usize {
        self.values.len() - self.dim
    }

    /// The `dim`-long direction starting at `idx`.
    pub fn slice(&self, idx: NoiseIndex) -> Result<&[f64]> {
        if idx.0 > self.max_offset() {
            return Err(Error::NoiseIndexOutOfRange {
                offset: idx.0,
                dim: self.dim,
                size: self.values.len(),
            });
        }
        Ok(&self.values[idx.0..idx.0 + self.dim])
    }

    /// Uniform offset in `0..=max_offset`, drawn from `stream`.
    pub fn draw_index(&self, stream: &mut RngStream) -> NoiseIndex {
        NoiseIndex(stream.next_below(self.max_offset() as u64 + 1) as usize)
    }

    /// `theta + sigma * eps[idx]`; `theta` is left untouched.
    pub fn perturb(&self, theta: &[f64], idx: NoiseIndex, sigma: f64) -> Result<Vec<f64>> {
        if theta.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: theta.len(),
            });
        }
        let eps = self.slice(idx)?;
        Ok(theta.iter().zip(eps).map(|(t, e)| t + sigma * e).collect())
    }
}
