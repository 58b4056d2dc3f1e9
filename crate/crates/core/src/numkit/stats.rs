use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Std used when fewer than two samples have been observed.
pub const COLD_START_STD: f64 = 1.0;
/// Lower bound on the divisor in [`RunningStat::normalize`].
pub const STD_FLOOR: f64 = 1e-8;

/// Per-coordinate running mean and population variance, merged with the
/// parallel (Chan et al.) form of Welford's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStat {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Folds a batch of rows into the statistic. An empty batch is a no-op.
    pub fn update<R: AsRef<[f64]>>(&mut self, batch: &[R]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let dim = self.dim();
        for row in batch {
            check_len(dim, row.as_ref().len())?;
        }
        let nb = batch.len() as f64;
        let mut bmean = vec![0.0; dim];
        for row in batch {
            for (m, x) in bmean.iter_mut().zip(row.as_ref()) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bm2 = vec![0.0; dim];
        for row in batch {
            for ((s, x), m) in bm2.iter_mut().zip(row.as_ref()).zip(&bmean) {
                *s += (x - m) * (x - m);
            }
        }
        self.merge_moments(batch.len() as u64, &bmean, &bm2);
        Ok(())
    }

    /// Merges another statistic of the same dimension.
    pub fn merge(&mut self, other: &RunningStat) -> Result<()> {
        check_len(self.dim(), other.dim())?;
        if other.count > 0 {
            self.merge_moments(other.count, &other.mean, &other.m2);
        }
        Ok(())
    }

    fn merge_moments(&mut self, nb: u64, bmean: &[f64], bm2: &[f64]) {
        let na = self.count as f64;
        let nbf = nb as f64;
        let total = na + nbf;
        for i in 0..self.mean.len() {
            let delta = bmean[i] - self.mean[i];
            self.mean[i] += delta * nbf / total;
            self.m2[i] += bm2[i] + delta * delta * na * nbf / total;
        }
        self.count += nb;
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|s| s / self.count as f64).collect()
    }

    /// Per-coordinate divisor used by [`normalize`](Self::normalize).
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![COLD_START_STD; self.dim()];
        }
        self.variance()
            .into_iter()
            .map(|v| v.sqrt().max(STD_FLOOR))
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(self.std())
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    #[test]
    fn closed_form_small_batch() {
        let mut s = RunningStat::new(1);
        s.update(&[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.variance()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cold_start_uses_unit_std() {
        let mut s = RunningStat::new(2);
        s.update(&[[4.0, -1.0]]).unwrap();
        assert_eq!(s.normalize(&[5.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut s = RunningStat::new(3);
        s.update::<[f64; 3]>(&[]).unwrap();
        assert_eq!(s, RunningStat::new(3));
    }

    #[test]
    fn chunked_stream_matches_two_pass() {
        let mut rng = RngStream::new(3);
        let data: Vec<[f64; 1]> = (0..10_000).map(|_| [3.0 + 2.0 * rng.next_gaussian()]).collect();
        let mut s = RunningStat::new(1);
        for chunk in data.chunks(1000) {
            s.update(chunk).unwrap();
        }
        let n = data.len() as f64;
        let mean = data.iter().map(|r| r[0]).sum::<f64>() / n;
        let var = data.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(((s.mean[0] - mean) / mean).abs() < 1e-10);
        assert!(((s.variance()[0] - var) / var).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_hits_floor() {
        let mut s = RunningStat::new(1);
        s.update(&[[2.0], [2.0], [2.0]]).unwrap();
        assert_eq!(s.std(), vec![STD_FLOOR]);
        assert_eq!(s.normalize(&[2.0]).unwrap(), vec![0.0]);
    }

    proptest! {
        #[test]
        fn merge_is_associative(
            a in proptest::collection::vec(-100.0f64..100.0, 1..40),
            b in proptest::collection::vec(-100.0f64..100.0, 1..40),
        ) {
            let rows = |v: &[f64]| v.iter().map(|&x| [x]).collect::<Vec<_>>();
            let mut split = RunningStat::new(1);
            split.update(&rows(&a)).unwrap();
            split.update(&rows(&b)).unwrap();
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let mut whole = RunningStat::new(1);
            whole.update(&rows(&joined)).unwrap();
            prop_assert_eq!(split.count, whole.count);
            prop_assert!((split.mean[0] - whole.mean[0]).abs() <= 1e-10 * (1.0 + whole.mean[0].abs()));
            prop_assert!((split.m2[0] - whole.m2[0]).abs() <= 1e-10 * (1.0 + whole.m2[0].abs()));
        }
    }
}
