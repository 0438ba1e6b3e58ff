//! Polynomial learning-rate decay and deterministic batch sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `base * (1 - step / total)^power` for `0 <= step <= total`.
pub fn lr_at(step: usize, base: f64, total: usize, power: f64) -> Result<f64> {
    if step > total {
        return Err(Error::Config(format!("schedule step {step} is past the total of {total}")));
    }
    if total == 0 {
        return Ok(base);
    }
    Ok(base * (1.0 - step as f64 / total as f64).powf(power))
}

/// Endless shuffled index stream over `len` items, reshuffled per epoch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..len).collect(), pos: 0, epoch: 0, batch: batch.min(len).max(1), rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Batches per epoch; the remainder that does not fill a batch is dropped.
    pub fn batches_per_epoch(&self) -> usize {
        (self.order.len() / self.batch).max(1)
    }

    /// Next batch of indices and whether it opens a new epoch.
    pub fn next_batch(&mut self) -> (Vec<usize>, bool) {
        let mut fresh = self.pos == 0 && self.epoch == 0;
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
            fresh = true;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        (out, fresh)
    }
}
