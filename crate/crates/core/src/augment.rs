//! Curvature-guided view generation, masking baselines, and the
//! down-sampling / distortion perturbations used for robustness tests.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::RawTrajectory;
use crate::error::Result;
use crate::movsem::{self, NormalizedTrajectory, HEADING_EPS};

/// Smoothing constant in the inverse-curvature weight.
pub const CURVATURE_EPS: f64 = 0.01;
/// Cap on any single point's drop probability.
pub const MAX_DROP: f64 = 0.9;

/// Per-point turning magnitude in `[0, 1]`; endpoints are always 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureProfile {
    pub kappa: Vec<f64>,
}

impl CurvatureProfile {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn is_endpoint(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.kappa.len()
    }
}

/// Heading difference wrapped into `(-1, 1]`.
pub fn wrap_heading(d: f64) -> f64 {
    let mut d = d % 2.0;
    if d > 1.0 {
        d -= 2.0;
    } else if d <= -1.0 {
        d += 2.0;
    }
    d
}

pub fn curvature_profile(norm: &NormalizedTrajectory) -> CurvatureProfile {
    let p = &norm.points;
    let n = p.len();
    let mut kappa = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        let (ax, ay) = (p[i].0 - p[i - 1].0, p[i].1 - p[i - 1].1);
        let (bx, by) = (p[i + 1].0 - p[i].0, p[i + 1].1 - p[i].1);
        if ax * ax + ay * ay <= HEADING_EPS || bx * bx + by * by <= HEADING_EPS {
            continue;
        }
        kappa[i] = wrap_heading(movsem::heading(bx, by) - movsem::heading(ax, ay)).abs();
    }
    CurvatureProfile { kappa }
}

/// CGA drop probabilities: `min(MAX_DROP, rho * w_i / mean(w))` with
/// `w_i = 1 / (kappa_i + CURVATURE_EPS)` over interior points; 0 at the ends.
pub fn cga_drop_probabilities(profile: &CurvatureProfile, rho: f64) -> Vec<f64> {
    let n = profile.len();
    let mut p = vec![0.0; n];
    if n < 3 || rho <= 0.0 {
        return p;
    }
    let w: Vec<f64> = profile.kappa[1..n - 1].iter().map(|k| 1.0 / (k + CURVATURE_EPS)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for (i, wi) in w.iter().enumerate() {
        p[i + 1] = (rho * wi / mean).min(MAX_DROP);
    }
    p
}

/// Indices of the points that survive, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedView {
    pub indices: Vec<usize>,
}

impl AugmentedView {
    pub fn identity(n: usize) -> Self {
        AugmentedView {
            indices: (0..n).collect(),
        }
    }

    fn from_keep(keep: &[bool]) -> Self {
        AugmentedView {
            indices: keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect(),
        }
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Restores dropped points in `order` until `floor` survive.
fn restore(keep: &mut [bool], floor: usize, order: impl IntoIterator<Item = usize>) {
    let floor = floor.min(keep.len());
    let mut alive = keep.iter().filter(|&&k| k).count();
    for i in order {
        if alive >= floor {
            break;
        }
        if !keep[i] {
            keep[i] = true;
            alive += 1;
        }
    }
}

pub fn cga_view(profile: &CurvatureProfile, rho: f64, floor: usize, seed: u64) -> AugmentedView {
    let probs = cga_drop_probabilities(profile, rho);
    let mut rng = rng_for(seed);
    let mut keep: Vec<bool> = probs.iter().map(|&p| !(p > 0.0 && rng.random_bool(p))).collect();
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&a, &b| profile.kappa[b].total_cmp(&profile.kappa[a]).then(a.cmp(&b)));
    restore(&mut keep, floor, order);
    AugmentedView::from_keep(&keep)
}

/// Uniform Bernoulli drops of interior points.
pub fn random_point_mask(n: usize, rho: f64, floor: usize, seed: u64) -> AugmentedView {
    let mut rng = rng_for(seed);
    let mut keep: Vec<bool> = (0..n)
        .map(|i| i == 0 || i + 1 == n || rho <= 0.0 || !rng.random_bool(rho))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    restore(&mut keep, floor, order);
    AugmentedView::from_keep(&keep)
}

/// Drops one contiguous interior span of `ceil(rho * n)` points.
pub fn block_mask(n: usize, rho: f64, floor: usize, seed: u64) -> AugmentedView {
    let mut keep = vec![true; n];
    if n < 3 || rho <= 0.0 {
        return AugmentedView::from_keep(&keep);
    }
    let mut rng = rng_for(seed);
    let span = ceil_count(rho, n).min(n - 2);
    let start = rng.random_range(1..=n - 1 - span);
    keep[start..start + span].iter_mut().for_each(|k| *k = false);
    // Grow back from both edges so survivors stay in at most two runs.
    let order = (0..span).map(|k| if k % 2 == 0 { start + k / 2 } else { start + span - 1 - k / 2 });
    restore(&mut keep, floor, order);
    AugmentedView::from_keep(&keep)
}

fn ceil_count(rho: f64, n: usize) -> usize {
    ((rho * n as f64) - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewStrategy {
    Cga,
    RandomPoint,
    Block,
}

pub fn make_view(strategy: ViewStrategy, norm: &NormalizedTrajectory, rho: f64, floor: usize, seed: u64) -> AugmentedView {
    match strategy {
        ViewStrategy::Cga => cga_view(&curvature_profile(norm), rho, floor, seed),
        ViewStrategy::RandomPoint => random_point_mask(norm.len(), rho, floor, seed),
        ViewStrategy::Block => block_mask(norm.len(), rho, floor, seed),
    }
}

/// Each point dropped independently with probability `rho`; at least two
/// points (or all, if fewer) survive.
pub fn downsample(traj: &RawTrajectory, rho: f64, seed: u64) -> RawTrajectory {
    let n = traj.len();
    if rho <= 0.0 {
        return traj.clone();
    }
    let mut rng = rng_for(seed);
    let mut keep: Vec<bool> = (0..n).map(|_| !rng.random_bool(rho)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    restore(&mut keep, 2, order);
    traj.select(&AugmentedView::from_keep(&keep).indices)
}

/// Shifts exactly `ceil(rho * L)` distinct points by independent uniform
/// offsets in `[-delta, delta]` meters on each projected axis.
pub fn distort(traj: &RawTrajectory, rho: f64, delta: f64, seed: u64) -> Result<RawTrajectory> {
    let n = traj.len();
    let k = ceil_count(rho, n).min(n);
    let mut out = traj.clone();
    if k == 0 || delta <= 0.0 {
        return Ok(out);
    }
    let mut rng = rng_for(seed);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let p = &mut out.points[i];
        let (x, y) = movsem::mercator_project(p.lon, p.lat)?;
        let (ox, oy) = loop {
            let o = (rng.random_range(-delta..=delta), rng.random_range(-delta..=delta));
            if o != (0.0, 0.0) {
                break o;
            }
        };
        let (lon, lat) = movsem::inverse_mercator(x + ox, y + oy);
        p.lon = lon;
        p.lat = lat;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Point;
    use proptest::prelude::*;

    fn norm(points: Vec<(f64, f64)>) -> NormalizedTrajectory {
        NormalizedTrajectory { points }
    }

    /// First half a straight eastward run, second half an up/down zigzag.
    pub(crate) fn half_straight_half_zigzag(n: usize) -> NormalizedTrajectory {
        let step = 0.01;
        let mut p = vec![(0.0, 0.5)];
        for i in 1..n {
            let (x, y) = p[i - 1];
            if i < n / 2 {
                p.push((x + step, y));
            } else if i % 2 == 0 {
                p.push((x + step, y + step));
            } else {
                p.push((x + step, y - step));
            }
        }
        norm(p)
    }

    #[test]
    fn curvature_examples() {
        let straight = norm((0..10).map(|i| (i as f64 * 0.01, 0.2)).collect());
        assert!(curvature_profile(&straight).kappa.iter().all(|&k| k == 0.0));
        let right = norm(vec![(0.0, 0.0), (0.01, 0.0), (0.01, 0.01)]);
        assert!((curvature_profile(&right).kappa[1] - 0.5).abs() < 1e-12);
        let uturn = norm(vec![(0.0, 0.0), (0.01, 0.0), (0.0, 0.0)]);
        assert!((curvature_profile(&uturn).kappa[1] - 1.0).abs() < 1e-12);
        let stalled = norm(vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.01)]);
        assert_eq!(curvature_profile(&stalled).kappa[1], 0.0);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_heading(1.5), -0.5);
        assert_eq!(wrap_heading(-1.0), 1.0);
        assert_eq!(wrap_heading(1.0), 1.0);
        assert_eq!(wrap_heading(-1.5), 0.5);
    }

    #[test]
    fn zero_rate_is_identity() {
        let t = half_straight_half_zigzag(40);
        for s in [ViewStrategy::Cga, ViewStrategy::RandomPoint, ViewStrategy::Block] {
            assert_eq!(make_view(s, &t, 0.0, 4, 3), AugmentedView::identity(40));
        }
    }

    #[test]
    fn straight_half_drops_more() {
        let t = half_straight_half_zigzag(60);
        let prof = curvature_profile(&t);
        let (mut straight, mut zig) = (0usize, 0usize);
        for seed in 0..10_000 {
            let v = cga_view(&prof, 0.3, 4, seed);
            let mut keep = [false; 60];
            v.indices.iter().for_each(|&i| keep[i] = true);
            straight += (1..29).filter(|&i| !keep[i]).count();
            zig += (31..59).filter(|&i| !keep[i]).count();
        }
        assert!(straight > zig, "straight {straight} zigzag {zig}");
    }

    #[test]
    fn block_mask_runs() {
        for seed in 0..200 {
            let v = block_mask(50, 0.3, 4, seed);
            let runs = 1 + v.indices.windows(2).filter(|w| w[1] != w[0] + 1).count();
            assert!(runs <= 2);
            assert_eq!(v.indices.len(), 50 - 15);
        }
    }

    #[test]
    fn random_mask_survivor_fraction() {
        let (n, rho) = (200, 0.3);
        let total: usize = (0..10_000).map(|s| random_point_mask(n, rho, 4, s).indices.len()).sum();
        let frac = total as f64 / (10_000 * n) as f64;
        assert!((frac - (1.0 - rho)).abs() < 0.02, "{frac}");
    }

    fn line(n: usize) -> RawTrajectory {
        RawTrajectory::new(
            "l",
            (0..n).map(|i| Point::new(-8.6 + 1e-4 * i as f64, 41.15, 15.0 * i as f64)).collect(),
        )
    }

    #[test]
    fn downsample_cases() {
        let t = line(200);
        assert_eq!(downsample(&t, 0.0, 1), t);
        assert_eq!(downsample(&t, 0.5, 9), downsample(&t, 0.5, 9));
        let mean = (0..2000).map(|s| downsample(&t, 0.5, s).len()).sum::<usize>() as f64 / 2000.0;
        assert!((mean - 100.0).abs() < 1.0, "{mean}");
        assert!(downsample(&line(3), 0.5, 4).len() >= 2);
    }

    #[test]
    fn distort_cases() {
        let t = line(47);
        assert_eq!(distort(&t, 0.0, 30.0, 1).unwrap(), t);
        let d = distort(&t, 0.3, 30.0, 2).unwrap();
        let changed: Vec<usize> = (0..t.len()).filter(|&i| t.points[i] != d.points[i]).collect();
        assert_eq!(changed.len(), 15);
        for &i in &changed {
            let a = movsem::mercator_project(t.points[i].lon, t.points[i].lat).unwrap();
            let b = movsem::mercator_project(d.points[i].lon, d.points[i].lat).unwrap();
            let moved = (a.0 - b.0).hypot(a.1 - b.1);
            assert!(moved <= 30.0 * 2f64.sqrt() + 1e-6, "{moved}");
            assert_eq!(d.points[i].t, t.points[i].t);
        }
    }

    #[test]
    fn views_differ_across_seeds() {
        let t = half_straight_half_zigzag(20);
        let prof = curvature_profile(&t);
        let same = (0..1000).filter(|&s| cga_view(&prof, 0.2, 4, 2 * s) == cga_view(&prof, 0.2, 4, 2 * s + 1)).count();
        assert!(same < 10, "{same} identical pairs");
    }

    fn kappas() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 3..80)
    }

    proptest! {
        #[test]
        fn drop_probability_monotone_in_curvature(mut k in kappas(), rho in 0.05f64..0.6) {
            let n = k.len();
            k[0] = 0.0;
            k[n - 1] = 0.0;
            let prof = CurvatureProfile { kappa: k.clone() };
            let p = cga_drop_probabilities(&prof, rho);
            for a in 1..n - 1 {
                for b in 1..n - 1 {
                    if k[a] >= k[b] {
                        prop_assert!(p[a] <= p[b] + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn views_keep_endpoints_order_and_floor(k in kappas(), rho in 0.0f64..0.95, seed in any::<u64>(), floor in 2usize..8) {
            let n = k.len();
            let prof = CurvatureProfile { kappa: k };
            for v in [cga_view(&prof, rho, floor, seed), random_point_mask(n, rho, floor, seed), block_mask(n, rho, floor, seed)] {
                prop_assert_eq!(v.indices[0], 0);
                prop_assert_eq!(*v.indices.last().unwrap(), n - 1);
                prop_assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(v.indices.len() >= floor.min(n));
            }
        }
    }
}
