use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movsem::{NormalizedTrajectory, ProjectedRegion};

/// Uniform grid over the unit square of normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell_size: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: u32,
    pub ny: u32,
}

impl GridSpec {
    pub fn new(cell_size: f64, region: &ProjectedRegion) -> Result<Self> {
        if !(cell_size > 0.0) || !(region.width > 0.0) || !(region.height > 0.0) {
            return Err(Error::Config(format!("invalid grid: cell {cell_size} m over {region:?}")));
        }
        let dx = cell_size / region.width;
        let dy = cell_size / region.height;
        Ok(Self::from_extents(cell_size, dx, dy))
    }

    pub fn from_extents(cell_size: f64, dx: f64, dy: f64) -> Self {
        // The small slack keeps exact divisions (1/0.1) from gaining a cell.
        let nx = ((1.0 / dx) - 1e-9).ceil().max(1.0) as u32;
        let ny = ((1.0 / dy) - 1e-9).ceil().max(1.0) as u32;
        GridSpec {
            cell_size,
            dx,
            dy,
            nx,
            ny,
        }
    }

    pub fn num_cells(&self) -> u64 {
        self.nx as u64 * self.ny as u64
    }

    /// `floor(x/dx) * N_y + floor(y/dy)`; indices are clamped into the
    /// grid so the max edge (and any overshoot) lands in the last cell.
    pub fn assign_cell(&self, x: f64, y: f64) -> u32 {
        let ix = ((x / self.dx).floor().max(0.0) as u64).min(self.nx as u64 - 1) as u32;
        let iy = ((y / self.dy).floor().max(0.0) as u64).min(self.ny as u64 - 1) as u32;
        ix * self.ny + iy
    }

    pub fn cells(&self, norm: &NormalizedTrajectory) -> Vec<u32> {
        norm.points.iter().map(|&(x, y)| self.assign_cell(x, y)).collect()
    }
}
