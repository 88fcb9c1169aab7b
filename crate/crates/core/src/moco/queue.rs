use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::normalize_rows;
use crate::error::{Error, Result};

/// Fixed-size ring buffer of unit-norm negative embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Queue {
    dim: usize,
    rows: Vec<f32>,
    cursor: usize,
}

impl Queue {
    /// `size` random unit vectors (isotropic directions).
    pub fn random(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Config("queue size and dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<f32> = (0..size * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        normalize_rows(&mut rows, dim)?;
        Ok(Queue { dim, rows, cursor: 0 })
    }

    pub fn size(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Overwrites the oldest entries with `keys` (`[b, dim]`, unit rows).
    pub fn enqueue(&mut self, keys: &[f32]) -> Result<()> {
        if keys.len() % self.dim != 0 {
            return Err(Error::shape("enqueue", format!("{} values for dim {}", keys.len(), self.dim)));
        }
        let n = self.size();
        let b = keys.len() / self.dim;
        if b > n {
            return Err(Error::Config(format!("batch of {b} keys exceeds queue size {n}")));
        }
        for k in keys.chunks(self.dim) {
            let at = self.cursor * self.dim;
            self.rows[at..at + self.dim].copy_from_slice(k);
            self.cursor = (self.cursor + 1) % n;
        }
        Ok(())
    }
}
