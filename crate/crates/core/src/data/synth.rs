//! Synthetic taxi-like trajectories on a Manhattan road grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Point, RawTrajectory, Region};
use crate::error::{Error, Result};
use crate::movsem::{inverse_mercator, ProjectedRegion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub l_min: usize,
    pub l_max: usize,
    /// Probability of a 90 degree turn at each intersection.
    pub turn_rate: f64,
    /// Distance between parallel roads, meters.
    pub road_spacing: f64,
    /// Mean speed, meters per second.
    pub speed: f64,
    /// Relative speed spread, redrawn per road segment.
    pub speed_jitter: f64,
    pub sample_interval: f64,
    /// Uniform positional noise amplitude per axis, meters.
    pub noise: f64,
    pub start_time: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            l_min: 20,
            l_max: 200,
            turn_rate: 0.3,
            road_spacing: 300.0,
            speed: 8.0,
            speed_jitter: 0.3,
            sample_interval: 15.0,
            noise: 0.0,
            start_time: 1.4e9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_min < 1 || self.l_min > self.l_max {
            return Err(Error::Config(format!("synthetic lengths [{}, {}] invalid", self.l_min, self.l_max)));
        }
        if !(0.0..=1.0).contains(&self.turn_rate) {
            return Err(Error::Config(format!("turn_rate {} outside [0, 1]", self.turn_rate)));
        }
        if self.road_spacing <= 0.0 || self.speed <= 0.0 || self.sample_interval <= 0.0 {
            return Err(Error::Config("road_spacing, speed and sample_interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || self.noise < 0.0 {
            return Err(Error::Config("speed_jitter must be in [0, 1) and noise >= 0".into()));
        }
        Ok(())
    }
}

/// `n` trajectories inside `region`; a pure function of its arguments.
pub fn generate_synthetic(n: usize, region: &Region, seed: u64, cfg: &SynthConfig) -> Result<Vec<RawTrajectory>> {
    if n == 0 {
        return Err(Error::Config("generate_synthetic needs n >= 1".into()));
    }
    cfg.validate()?;
    let outer = region.projected()?;
    // A one-meter inset keeps the projection round trip inside the box.
    let pr = ProjectedRegion {
        x_min: outer.x_min + 1.0,
        y_min: outer.y_min + 1.0,
        width: outer.width - 2.0,
        height: outer.height - 2.0,
    };
    if pr.width < 2.0 * cfg.road_spacing || pr.height < 2.0 * cfg.road_spacing {
        return Err(Error::Config(format!(
            "region {:.0}x{:.0} m is too small for road spacing {} m",
            pr.width, pr.height, cfg.road_spacing
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(cfg.l_min..=cfg.l_max);
            let xy = if cfg.turn_rate == 0.0 {
                straight_run(&mut rng, &pr, cfg, len)
            } else {
                grid_walk(&mut rng, &pr, cfg, len)
            };
            let t0 = cfg.start_time + 3600.0 * i as f64;
            let points = xy
                .into_iter()
                .enumerate()
                .map(|(k, (x, y))| {
                    let (x, y) = if cfg.noise > 0.0 {
                        (
                            x + rng.random_range(-cfg.noise..=cfg.noise),
                            y + rng.random_range(-cfg.noise..=cfg.noise),
                        )
                    } else {
                        (x, y)
                    };
                    let (lon, lat) = inverse_mercator(x, y);
                    Point::new(lon, lat, t0 + cfg.sample_interval * k as f64)
                })
                .collect();
            Ok(RawTrajectory::new(format!("synth-{i:06}"), points))
        })
        .collect()
}

const DIRS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];

/// Axis-aligned constant-step run that fits in the region.
fn straight_run(rng: &mut ChaCha8Rng, pr: &ProjectedRegion, cfg: &SynthConfig, len: usize) -> Vec<(f64, f64)> {
    let horizontal = rng.random_bool(0.5);
    let (extent, cross) = if horizontal { (pr.width, pr.height) } else { (pr.height, pr.width) };
    let span = (len.max(2) - 1) as f64;
    let step = (cfg.speed * cfg.sample_interval).min(0.98 * extent / span);
    let free = (0.98 * extent - step * span).max(0.0);
    let start = 0.01 * extent + rng.random_range(0.0..=free);
    let offset = rng.random_range(0.01 * cross..0.99 * cross);
    let forward = rng.random_bool(0.5);
    (0..len)
        .map(|k| {
            let along = if forward {
                start + step * k as f64
            } else {
                start + step * (len - 1 - k) as f64
            };
            if horizontal {
                (pr.x_min + along, pr.y_min + offset)
            } else {
                (pr.x_min + offset, pr.y_min + along)
            }
        })
        .collect()
}

fn grid_walk(rng: &mut ChaCha8Rng, pr: &ProjectedRegion, cfg: &SynthConfig, len: usize) -> Vec<(f64, f64)> {
    let s = cfg.road_spacing;
    let nx = (pr.width / s).floor() as i64;
    let ny = (pr.height / s).floor() as i64;
    // Positions are kept in local meters relative to the SW corner.
    let (mut x, mut y, mut dir);
    if rng.random_bool(0.5) {
        y = s * rng.random_range(0..=ny) as f64;
        x = rng.random_range(0.0..s * nx as f64);
        dir = if rng.random_bool(0.5) { 0 } else { 2 };
    } else {
        x = s * rng.random_range(0..=nx) as f64;
        y = rng.random_range(0.0..s * ny as f64);
        dir = if rng.random_bool(0.5) { 1 } else { 3 };
    }
    let inside = |gx: i64, gy: i64| (0..=nx).contains(&gx) && (0..=ny).contains(&gy);
    let draw_speed = |rng: &mut ChaCha8Rng| cfg.speed * (1.0 + rng.random_range(-cfg.speed_jitter..=cfg.speed_jitter));
    let mut speed = draw_speed(rng);
    let mut out = Vec::with_capacity(len);
    out.push((pr.x_min + x, pr.y_min + y));
    while out.len() < len {
        let mut d = speed * cfg.sample_interval;
        while d > 0.0 {
            let (dx, dy) = DIRS[dir];
            let coord = if dx != 0.0 { x } else { y };
            let sign = dx + dy;
            let next = if sign > 0.0 {
                ((coord / s + 1e-9).floor() + 1.0) * s
            } else {
                ((coord / s - 1e-9).ceil() - 1.0) * s
            };
            let gap = (next - coord).abs();
            if d < gap {
                x += dx * d;
                y += dy * d;
                break;
            }
            x += dx * gap;
            y += dy * gap;
            // Snap onto the intersection to keep the walk on the grid.
            x = (x / s).round() * s;
            y = (y / s).round() * s;
            d -= gap;
            let (gx, gy) = ((x / s).round() as i64, (y / s).round() as i64);
            let can = |k: usize| {
                let (ax, ay) = DIRS[k];
                inside(gx + ax as i64, gy + ay as i64)
            };
            let turns: Vec<usize> = [(dir + 1) % 4, (dir + 3) % 4].into_iter().filter(|&k| can(k)).collect();
            let turn = rng.random_bool(cfg.turn_rate) || !can(dir);
            dir = if turn && !turns.is_empty() {
                turns[rng.random_range(0..turns.len())]
            } else if can(dir) {
                dir
            } else {
                (dir + 2) % 4
            };
            speed = draw_speed(rng);
        }
        out.push((pr.x_min + x, pr.y_min + y));
    }
    out
}
