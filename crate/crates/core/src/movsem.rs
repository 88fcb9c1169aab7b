//! Movement-semantics features: projected and normalized coordinates,
//! per-step displacement and heading, concatenated with cell context.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cellgraph::CellEmbeddingTable;
use crate::data::RawTrajectory;
use crate::error::{Error, Result};

pub const EARTH_RADIUS: f64 = 6_378_137.0;
pub const MAX_MERCATOR_LAT: f64 = 85.05113;
/// Squared normalized displacement below which the heading is zero.
pub const HEADING_EPS: f64 = 1e-6;

/// Region bounds in Mercator meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRegion {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
}

/// Spherical Web-Mercator.
pub fn mercator_project(lon: f64, lat: f64) -> Result<(f64, f64)> {
    if !(lat.abs() < MAX_MERCATOR_LAT) {
        return Err(Error::Domain(format!("latitude {lat} outside the Mercator bound")));
    }
    let mx = EARTH_RADIUS * lon.to_radians();
    let my = EARTH_RADIUS * lat.to_radians().tan().asinh();
    Ok((mx, my))
}

pub fn inverse_mercator(mx: f64, my: f64) -> (f64, f64) {
    let lon = (mx / EARTH_RADIUS).to_degrees();
    let lat = (2.0 * (my / EARTH_RADIUS).exp().atan() - PI / 2.0).to_degrees();
    (lon, lat)
}

pub fn project_points(traj: &RawTrajectory) -> Result<Vec<(f64, f64)>> {
    traj.points.iter().map(|p| mercator_project(p.lon, p.lat)).collect()
}

/// Per-point coordinates relative to a region, in region units.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedTrajectory {
    pub points: Vec<(f64, f64)>,
}

impl NormalizedTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn normalize(traj: &RawTrajectory, region: &ProjectedRegion) -> Result<NormalizedTrajectory> {
    Ok(normalize_projected(&project_points(traj)?, region))
}

pub fn normalize_projected(xy: &[(f64, f64)], region: &ProjectedRegion) -> NormalizedTrajectory {
    NormalizedTrajectory {
        points: xy
            .iter()
            .map(|&(x, y)| ((x - region.x_min) / region.width, (y - region.y_min) / region.height))
            .collect(),
    }
}

/// `(dx_i, dy_i, theta_i)` per point; the first point has zero displacement.
pub fn movement_dynamics(norm: &NormalizedTrajectory) -> Vec<(f64, f64, f64)> {
    let p = &norm.points;
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        if i == 0 {
            out.push((0.0, 0.0, 0.0));
            continue;
        }
        let dx = p[i].0 - p[i - 1].0;
        let dy = p[i].1 - p[i - 1].1;
        out.push((dx, dy, heading(dx, dy)));
    }
    out
}

/// `atan2(dy, dx) / pi`, or 0 for displacements under the threshold.
pub fn heading(dx: f64, dy: f64) -> f64 {
    if dx * dx + dy * dy > HEADING_EPS {
        dy.atan2(dx) / PI
    } else {
        0.0
    }
}

/// Row-major `len x dim` per-point feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Which parts of the per-point vector to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `[dx, dy, theta, ST]`.
    Full,
    /// Cell context only.
    CellOnly,
}

impl FeatureSet {
    pub fn dim(self, d_se: usize) -> usize {
        match self {
            FeatureSet::Full => 3 + d_se,
            FeatureSet::CellOnly => d_se,
        }
    }
}

/// `f_i = [dx_i, dy_i, theta_i, ST_{cell_i}]`, unseen cells mapping to zeros.
pub fn compose_features(
    dynamics: &[(f64, f64, f64)],
    cells: &[u32],
    table: &CellEmbeddingTable,
    set: FeatureSet,
) -> Result<FeatureSequence> {
    if dynamics.len() != cells.len() {
        return Err(Error::shape(
            "compose_features",
            format!("{} dynamics rows vs {} cells", dynamics.len(), cells.len()),
        ));
    }
    let dim = set.dim(table.dim);
    let mut values = Vec::with_capacity(dim * cells.len());
    for (&(dx, dy, th), &c) in dynamics.iter().zip(cells) {
        if set == FeatureSet::Full {
            values.extend_from_slice(&[dx as f32, dy as f32, th as f32]);
        }
        match table.get(c) {
            Some(v) => values.extend_from_slice(v),
            None => values.extend(std::iter::repeat_n(0.0f32, table.dim)),
        }
    }
    Ok(FeatureSequence { dim, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Point, Region};
    use proptest::prelude::*;

    #[test]
    fn mercator_known_points() {
        assert_eq!(mercator_project(0.0, 0.0).unwrap(), (0.0, 0.0));
        let (x, y) = mercator_project(180.0, 0.0).unwrap();
        assert!((x - 20037508.342789244).abs() < 1e-6 && y.abs() < 1e-9);
        assert!(mercator_project(0.0, 86.0).is_err());
    }

    #[test]
    fn mercator_matches_reference_form() {
        // Textbook form: y = R * ln(tan(pi/4 + lat/2)).
        let (lon, lat) = (-8.61f64, 41.15f64);
        let (x, y) = mercator_project(lon, lat).unwrap();
        let rx = EARTH_RADIUS * lon * PI / 180.0;
        let ry = EARTH_RADIUS * (PI / 4.0 + lat * PI / 360.0).tan().ln();
        assert!((x - rx).abs() < 1e-6);
        assert!((y - ry).abs() < 1e-6);
    }

    #[test]
    fn inverse_round_trips() {
        let (x, y) = mercator_project(-8.61, 41.15).unwrap();
        let (lon, lat) = inverse_mercator(x, y);
        assert!((lon + 8.61).abs() < 1e-12 && (lat - 41.15).abs() < 1e-12);
    }

    #[test]
    fn normalize_corners() {
        let r = Region::PORTO;
        let pr = r.projected().unwrap();
        let t = RawTrajectory::new(
            "c",
            vec![
                Point::new(r.lon_min, r.lat_min, 0.0),
                Point::new(r.lon_max, r.lat_max, 1.0),
            ],
        );
        let n = normalize(&t, &pr).unwrap();
        assert!(n.points[0].0.abs() < 1e-12 && n.points[0].1.abs() < 1e-12);
        assert!((n.points[1].0 - 1.0).abs() < 1e-12 && (n.points[1].1 - 1.0).abs() < 1e-12);
        let mid = normalize_projected(&[(pr.x_min + pr.width / 2.0, pr.y_min + pr.height / 2.0)], &pr);
        assert!((mid.points[0].0 - 0.5).abs() < 1e-12 && (mid.points[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heading_cases() {
        let dyn_of = |pts: Vec<(f64, f64)>| movement_dynamics(&NormalizedTrajectory { points: pts });
        assert_eq!(dyn_of(vec![(0.3, 0.3), (0.3, 0.3)])[1], (0.0, 0.0, 0.0));
        assert!((dyn_of(vec![(0.0, 0.0), (0.01, 0.01)])[1].2 - 0.25).abs() < 1e-12);
        assert!((dyn_of(vec![(0.0, 0.0), (0.0, 0.01)])[1].2 - 0.5).abs() < 1e-12);
        assert!((dyn_of(vec![(0.01, 0.0), (0.0, 0.0)])[1].2 - 1.0).abs() < 1e-12);
        assert_eq!(dyn_of(vec![(0.5, 0.5)]), vec![(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn compose_dimensions_and_oov() {
        let table = CellEmbeddingTable::new(64, vec![3], vec![1.0; 64]).unwrap();
        let d = vec![(0.0, 0.0, 0.0), (0.1, 0.0, 0.0)];
        let f = compose_features(&d, &[3, 9], &table, FeatureSet::Full).unwrap();
        assert_eq!(f.dim, 67);
        assert_eq!(f.len(), 2);
        assert!(f.row(0)[3..].iter().all(|&v| v == 1.0));
        assert!(f.row(1)[3..].iter().all(|&v| v == 0.0));
        assert_eq!(FeatureSet::Full.dim(253), 256);
        let c = compose_features(&d, &[3, 9], &table, FeatureSet::CellOnly).unwrap();
        assert_eq!(c.dim, 64);
        assert!(compose_features(&d, &[3], &table, FeatureSet::Full).is_err());
    }

    fn pts() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60)
    }

    proptest! {
        #[test]
        fn displacements_telescope(p in pts()) {
            let d = movement_dynamics(&NormalizedTrajectory { points: p.clone() });
            prop_assert_eq!(d.len(), p.len());
            let sx: f64 = d.iter().map(|v| v.0).sum();
            let sy: f64 = d.iter().map(|v| v.1).sum();
            prop_assert!((sx - (p[p.len() - 1].0 - p[0].0)).abs() < 1e-12);
            prop_assert!((sy - (p[p.len() - 1].1 - p[0].1)).abs() < 1e-12);
        }

        #[test]
        fn reversed_heading_differs_by_one(dx in -0.5f64..0.5, dy in -0.5f64..0.5) {
            prop_assume!(dx * dx + dy * dy > 2.0 * HEADING_EPS);
            let diff = (heading(dx, dy) - heading(-dx, -dy)).abs();
            prop_assert!((diff - 1.0).abs() < 1e-12);
        }

        #[test]
        fn translation_invariant(p in pts(), ox in -5000.0f64..5000.0, oy in -5000.0f64..5000.0) {
            let region = ProjectedRegion { x_min: -1.0e6, y_min: 5.0e6, width: 1.0e4, height: 8.0e3 };
            let xy: Vec<(f64, f64)> = p.iter().map(|&(a, b)| (region.x_min + a * region.width, region.y_min + b * region.height)).collect();
            let shifted_region = ProjectedRegion { x_min: region.x_min + ox, y_min: region.y_min + oy, ..region };
            let shifted: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
            let a = movement_dynamics(&normalize_projected(&xy, &region));
            let b = movement_dynamics(&normalize_projected(&shifted, &shifted_region));
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u.0 - v.0).abs() < 1e-9 && (u.1 - v.1).abs() < 1e-9);
                let dth = (u.2 - v.2).abs();
                prop_assert!(dth < 1e-6 || (dth - 2.0).abs() < 1e-6);
            }
        }
    }
}
