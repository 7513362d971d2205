//! Batch composition from a real-style pool and a fully-overlapped pool at
//! a fixed real:synthetic ratio.

use rand::Rng;

use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub pool: Pool,
    pub index: usize,
}

/// Deterministic batch stream. A coefficient `c` asks for `c` real items
/// per synthetic one: `c = 0` is synthetic only, `c = inf` real only.
#[derive(Debug, Clone)]
pub struct RealSynMix {
    real_len: usize,
    synthetic_len: usize,
    batch_size: usize,
    coefficient: f64,
    seed: u64,
}

impl RealSynMix {
    pub fn new(
        real_len: usize,
        synthetic_len: usize,
        batch_size: usize,
        coefficient: f64,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if coefficient.is_nan() || coefficient < 0.0 {
            return Err(Error::invalid(format!("sampling coefficient {coefficient} must be >= 0")));
        }
        let s = Self {
            real_len,
            synthetic_len,
            batch_size,
            coefficient,
            seed,
        };
        if s.real_share() > 0.0 && real_len == 0 {
            return Err(Error::Empty("the real-style manifest is empty".into()));
        }
        if s.real_share() < 1.0 && synthetic_len == 0 {
            return Err(Error::Empty("the synthetic manifest is empty".into()));
        }
        Ok(s)
    }

    /// Expected fraction of real items, `c / (c + 1)`.
    pub fn real_share(&self) -> f64 {
        if self.coefficient.is_infinite() {
            1.0
        } else {
            self.coefficient / (self.coefficient + 1.0)
        }
    }

    /// Real items in batch `(epoch, step)`: the exact share when it is an
    /// integer, otherwise its floor plus one with probability equal to the
    /// fractional part, so the long-run fraction stays exact.
    pub fn real_count(&self, epoch: usize, step: usize) -> usize {
        let x = self.batch_size as f64 * self.real_share();
        let base = x.floor();
        let frac = x - base;
        let extra = if frac > 1e-9 && frac < 1.0 - 1e-9 {
            rng_for(self.seed, "batch-split", batch_key(epoch, step)).gen_bool(frac) as usize
        } else {
            frac.round() as usize
        };
        (base as usize + extra).min(self.batch_size)
    }

    /// Items of one batch, real first, each drawn uniformly with replacement.
    pub fn batch(&self, epoch: usize, step: usize) -> Vec<BatchItem> {
        let n_real = self.real_count(epoch, step);
        let mut rng = rng_for(self.seed, "batch-items", batch_key(epoch, step));
        let mut out = Vec::with_capacity(self.batch_size);
        for k in 0..self.batch_size {
            let (pool, len) = if k < n_real {
                (Pool::Real, self.real_len)
            } else {
                (Pool::Synthetic, self.synthetic_len)
            };
            out.push(BatchItem {
                pool,
                index: rng.gen_range(0..len),
            });
        }
        out
    }
}

fn batch_key(epoch: usize, step: usize) -> u64 {
    ((epoch as u64) << 32) | step as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_real(b: &[BatchItem]) -> usize {
        b.iter().filter(|i| i.pool == Pool::Real).count()
    }

    #[test]
    fn divisible_batches_are_exact() {
        let s = RealSynMix::new(10, 10, 28, 6.0, 1).unwrap();
        for step in 0..100 {
            assert_eq!(count_real(&s.batch(0, step)), 24);
        }
        let s = RealSynMix::new(10, 10, 8, 1.0, 1).unwrap();
        for step in 0..100 {
            assert_eq!(count_real(&s.batch(3, step)), 4);
        }
    }

    #[test]
    fn long_run_fraction_for_indivisible_batch() {
        let s = RealSynMix::new(10, 10, 8, 6.0, 2).unwrap();
        let total: usize = (0..10_000).map(|k| count_real(&s.batch(k / 100, k % 100))).sum();
        let frac = total as f64 / 80_000.0;
        assert!((frac - 6.0 / 7.0).abs() < 0.01 * 6.0 / 7.0, "{frac}");
    }

    #[test]
    fn extremes_and_errors() {
        let s = RealSynMix::new(0, 5, 4, 0.0, 0).unwrap();
        assert_eq!(count_real(&s.batch(0, 0)), 0);
        let s = RealSynMix::new(5, 0, 4, f64::INFINITY, 0).unwrap();
        assert_eq!(count_real(&s.batch(0, 0)), 4);
        assert!(RealSynMix::new(0, 5, 4, 6.0, 0).is_err());
        assert!(RealSynMix::new(5, 0, 4, 6.0, 0).is_err());
        assert!(RealSynMix::new(5, 5, 0, 6.0, 0).is_err());
        assert!(RealSynMix::new(5, 5, 4, -1.0, 0).is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = RealSynMix::new(7, 3, 8, 6.0, 9).unwrap();
        let b = RealSynMix::new(7, 3, 8, 6.0, 9).unwrap();
        for step in 0..50 {
            let x = a.batch(1, step);
            assert_eq!(x, b.batch(1, step));
            assert!(x.iter().all(|i| i.index < if i.pool == Pool::Real { 7 } else { 3 }));
        }
    }
}
