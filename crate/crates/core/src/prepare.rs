//! Per-trajectory state shared by training and evaluation: normalized
//! points, grid cells, and curvature, plus the mapping from a (possibly
//! augmented) point subset to encoder input.

use crate::augment::{curvature_profile, make_view, AugmentedView, CurvatureProfile, ViewStrategy};
use crate::cellgraph::{CellEmbeddingTable, GridSpec};
use crate::encoder::{make_patches, PatchedSequence};
use crate::error::Result;
use crate::movsem::{compose_features, movement_dynamics, FeatureSet, NormalizedTrajectory};

#[derive(Clone, Debug)]
pub struct PreparedTrajectory {
    pub norm: NormalizedTrajectory,
    pub cells: Vec<u32>,
    pub profile: CurvatureProfile,
}

impl PreparedTrajectory {
    pub fn new(norm: NormalizedTrajectory, grid: &GridSpec) -> Self {
        let cells = grid.cells(&norm);
        let profile = curvature_profile(&norm);
        PreparedTrajectory { norm, cells, profile }
    }

    pub fn len(&self) -> usize {
        self.norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm.is_empty()
    }

    pub fn view(&self, strategy: ViewStrategy, rho: f64, floor: usize, seed: u64) -> AugmentedView {
        match strategy {
            ViewStrategy::Cga => crate::augment::cga_view(&self.profile, rho, floor, seed),
            _ => make_view(strategy, &self.norm, rho, floor, seed),
        }
    }
}

/// Everything needed to turn points into encoder input.
#[derive(Clone, Debug)]
pub struct FeatureContext {
    pub table: CellEmbeddingTable,
    pub set: FeatureSet,
    pub patch: usize,
}

impl FeatureContext {
    pub fn dim(&self) -> usize {
        self.set.dim(self.table.dim)
    }

    /// Encoder input for the points `idx` of `traj` (all points if `None`).
    /// Displacements are recomputed between surviving neighbours.
    pub fn patched(&self, traj: &PreparedTrajectory, idx: Option<&[usize]>) -> Result<PatchedSequence> {
        let feats = match idx {
            None => compose_features(&movement_dynamics(&traj.norm), &traj.cells, &self.table, self.set)?,
            Some(idx) => {
                let norm = NormalizedTrajectory {
                    points: idx.iter().map(|&i| traj.norm.points[i]).collect(),
                };
                let cells: Vec<u32> = idx.iter().map(|&i| traj.cells[i]).collect();
                compose_features(&movement_dynamics(&norm), &cells, &self.table, self.set)?
            }
        };
        make_patches(&feats, self.patch)
    }
}

/// Deterministic sub-seed for one `(base, parts...)` combination.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}
