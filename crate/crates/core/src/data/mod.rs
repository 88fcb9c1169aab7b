//! Trajectory ingestion, filtering, splitting, synthetic generation and
//! on-disk formats.

mod jsonl;
mod porto;
pub mod store;
pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movsem::{mercator_project, ProjectedRegion};

pub use jsonl::{ingest_jsonl, write_jsonl};
pub use porto::{ingest_porto_csv, PortoOptions};
pub use synth::{generate_synthetic, SynthConfig};

/// Ingested trajectories plus the number of records that were rejected.
#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub trajectories: Vec<RawTrajectory>,
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
    /// Seconds since the Unix epoch.
    pub t: f64,
}

impl Point {
    pub fn new(lon: f64, lat: f64, t: f64) -> Self {
        Point { lon, lat, t }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory {
    pub id: String,
    pub points: Vec<Point>,
}

impl RawTrajectory {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        RawTrajectory { id: id.into(), points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks L >= 1, coordinate ranges and non-decreasing timestamps.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Domain(format!("trajectory {} has no points", self.id)));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.lon.is_finite() && p.lat.is_finite() && p.t.is_finite()) {
                return Err(Error::Domain(format!("trajectory {} point {i} is not finite", self.id)));
            }
            if !(-180.0..=180.0).contains(&p.lon) || !(-90.0..=90.0).contains(&p.lat) {
                return Err(Error::Domain(format!(
                    "trajectory {} point {i} out of range: ({}, {})",
                    self.id, p.lon, p.lat
                )));
            }
            if i > 0 && p.t < self.points[i - 1].t {
                return Err(Error::Domain(format!("trajectory {} timestamps decrease at point {i}", self.id)));
            }
        }
        Ok(())
    }

    /// A new trajectory made of the points at `idx` (in the given order).
    pub fn select(&self, idx: &[usize]) -> RawTrajectory {
        RawTrajectory {
            id: self.id.clone(),
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Bounding box in WGS84 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Region {
    /// The Porto box commonly used for the taxi dataset.
    pub const PORTO: Region = Region {
        lon_min: -8.7350,
        lon_max: -8.5232,
        lat_min: 41.1046,
        lat_max: 41.2404,
    };

    /// A compact downtown Porto box used for synthetic desk-scale data.
    pub const PORTO_DESK: Region = Region {
        lon_min: -8.6600,
        lon_max: -8.5900,
        lat_min: 41.1300,
        lat_max: 41.1800,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(Error::Domain(format!("degenerate region {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }

    /// Projected bounds in Mercator meters.
    pub fn projected(&self) -> Result<ProjectedRegion> {
        self.validate()?;
        let (x0, y0) = mercator_project(self.lon_min, self.lat_min)?;
        let (x1, y1) = mercator_project(self.lon_max, self.lat_max)?;
        Ok(ProjectedRegion {
            x_min: x0,
            y_min: y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }
}

/// Keeps trajectories with `l_min <= L <= l_max` and every point in `region`.
pub fn filter_dataset(trajs: &[RawTrajectory], region: &Region, l_min: usize, l_max: usize) -> Vec<RawTrajectory> {
    trajs
        .iter()
        .filter(|t| {
            (l_min..=l_max).contains(&t.len()) && t.points.iter().all(|p| region.contains(p.lon, p.lat))
        })
        .cloned()
        .collect()
}

/// Index partition of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Re-indexes every partition through `map` (used for nested splits).
    pub fn remap(&self, map: &[usize]) -> DatasetSplit {
        let m = |v: &[usize]| v.iter().map(|&i| map[i]).collect();
        DatasetSplit {
            train: m(&self.train),
            validation: m(&self.validation),
            test: m(&self.test),
        }
    }
}

/// Seeded shuffle then `floor(ratio * n)` for validation and test, the
/// remainder going to train.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    if n < 3 {
        return Err(Error::Domain(format!("cannot split {n} trajectories into three partitions")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (va * n as f64 + 1e-9).floor() as usize;
    let n_test = (te * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(DatasetSplit {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

/// Takes the first `n` entries of `pool` (a test partition) and splits
/// them again with `ratios`; returned indices refer to the full dataset.
pub fn carve_finetune(pool: &[usize], n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    if n > pool.len() {
        return Err(Error::Config(format!(
            "finetune subset of {n} requested from a pool of {}",
            pool.len()
        )));
    }
    Ok(split_dataset(n, ratios, seed)?.remap(&pool[..n]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(id: &str, n: usize, lon: f64) -> RawTrajectory {
        let pts = (0..n).map(|i| Point::new(lon, 41.15, i as f64 * 15.0)).collect();
        RawTrajectory::new(id, pts)
    }

    #[test]
    fn filter_length_bounds() {
        let r = Region::PORTO;
        assert!(filter_dataset(&[traj("a", 19, -8.6)], &r, 20, 200).is_empty());
        assert_eq!(filter_dataset(&[traj("a", 200, -8.6)], &r, 20, 200).len(), 1);
    }

    #[test]
    fn filter_mixed_fixture() {
        let r = Region::PORTO;
        let mut v = Vec::new();
        for i in 0..6 {
            v.push(traj(&format!("ok{i}"), 20 + i * 30, -8.6));
        }
        v.push(traj("short", 5, -8.6));
        v.push(traj("long", 201, -8.6));
        v.push(traj("west", 50, -9.5));
        let mut partly = traj("partly", 50, -8.6);
        partly.points[10].lat = 42.0;
        v.push(partly);
        let kept = filter_dataset(&v, &r, 20, 200);
        assert_eq!(kept.len(), 6);
        assert!(kept.iter().all(|t| t.id.starts_with("ok")));
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(100, (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 10, 20));
        let s = split_dataset(10, (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
        assert_eq!(split_dataset(10, (0.7, 0.1, 0.2), 1).unwrap(), s);
        assert!(split_dataset(2, (0.7, 0.1, 0.2), 1).is_err());
        assert!(split_dataset(10, (0.7, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn finetune_subset_comes_from_pool() {
        let s = split_dataset(1000, (0.7, 0.1, 0.2), 3).unwrap();
        let f = carve_finetune(&s.test, 100, (0.7, 0.1, 0.2), 4).unwrap();
        assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (70, 10, 20));
        for i in f.train.iter().chain(&f.validation).chain(&f.test) {
            assert!(s.test.contains(i));
        }
    }

    #[test]
    fn degenerate_region_rejected() {
        let r = Region {
            lon_min: 1.0,
            lon_max: 1.0,
            lat_min: 0.0,
            lat_max: 1.0,
        };
        assert!(r.validate().is_err());
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 3usize..400, seed in any::<u64>()) {
            let s = split_dataset(n, (0.7, 0.1, 0.2), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn filter_is_idempotent(lens in proptest::collection::vec(1usize..260, 0..20)) {
            let v: Vec<_> = lens.iter().enumerate().map(|(i, &l)| traj(&i.to_string(), l, -8.6)).collect();
            let once = filter_dataset(&v, &Region::PORTO, 20, 200);
            let twice = filter_dataset(&once, &Region::PORTO, 20, 200);
            prop_assert_eq!(once, twice);
        }
    }
}
