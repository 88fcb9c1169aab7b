use crate::error::{Error, Result};
use crate::movsem::FeatureSequence;

/// A feature sequence cut into `M = ceil(L / P)` patches of `P` rows each.
/// Masks use `true` for padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchedSequence {
    pub dim: usize,
    pub patch: usize,
    /// `M * P * dim` values, row-major, zero on padded slots.
    pub values: Vec<f32>,
    pub intra_mask: Vec<bool>,
    pub inter_mask: Vec<bool>,
}

impl PatchedSequence {
    pub fn num_patches(&self) -> usize {
        self.inter_mask.len()
    }

    /// Number of unpadded positions.
    pub fn len(&self) -> usize {
        self.intra_mask.iter().filter(|&&m| !m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends `slots` padded positions, growing the patch count as needed.
    pub fn with_extra_padding(mut self, slots: usize) -> Self {
        let total = self.intra_mask.len() + slots;
        let m = total.div_ceil(self.patch);
        let rows = m * self.patch;
        self.intra_mask.resize(rows, true);
        self.values.resize(rows * self.dim, 0.0);
        self.inter_mask = self
            .intra_mask
            .chunks(self.patch)
            .map(|c| c.iter().all(|&x| x))
            .collect();
        self
    }

    /// The unpadded rows in order.
    pub fn valid_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values
            .chunks(self.dim.max(1))
            .zip(&self.intra_mask)
            .filter(|(_, &m)| !m)
            .map(|(r, _)| r)
    }
}

pub fn make_patches(features: &FeatureSequence, patch: usize) -> Result<PatchedSequence> {
    if patch == 0 {
        return Err(Error::Config("patch length must be at least 1".into()));
    }
    let len = features.len();
    let m = len.div_ceil(patch);
    let rows = m * patch;
    let mut values = features.values.clone();
    values.resize(rows * features.dim, 0.0);
    let intra_mask: Vec<bool> = (0..rows).map(|r| r >= len).collect();
    let inter_mask = (0..m).map(|j| j * patch >= len).collect();
    Ok(PatchedSequence {
        dim: features.dim,
        patch,
        values,
        intra_mask,
        inter_mask,
    })
}
