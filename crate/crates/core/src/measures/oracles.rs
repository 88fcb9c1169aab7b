//! Top-down memoized reference recursions used as test oracles.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::edr::{matches, MatchMetric};
use super::edwp::{project, seg_cost};
use super::{dist, Pt};

pub fn random_pairs(count: usize, max_len: usize, seed: u64) -> Vec<(Vec<Pt>, Vec<Pt>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=max_len);
        (0..n)
            .map(|_| [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)])
            .collect::<Vec<Pt>>()
    };
    (0..count).map(|_| (seq(&mut rng), seq(&mut rng))).collect()
}

/// Suffix formulation: EDR(R, S) over `a[i..]`, `b[j..]`.
pub fn edr_rec(a: &[Pt], b: &[Pt], eps: f64, metric: MatchMetric) -> usize {
    fn go(a: &[Pt], b: &[Pt], i: usize, j: usize, eps: f64, m: MatchMetric, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = usize::from(!matches(a[i], b[j], eps, m));
        let v = (go(a, b, i + 1, j + 1, eps, m, memo) + sub)
            .min(go(a, b, i + 1, j, eps, m, memo) + 1)
            .min(go(a, b, i, j + 1, eps, m, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, eps, metric, &mut HashMap::new())
}

pub fn hausdorff_brute(a: &[Pt], b: &[Pt]) -> f64 {
    let dir = |x: &[Pt], y: &[Pt]| {
        x.iter()
            .map(|&p| y.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    dir(a, b).max(dir(b, a))
}

pub fn frechet_rec(a: &[Pt], b: &[Pt]) -> f64 {
    fn c(a: &[Pt], b: &[Pt], i: usize, j: usize, memo: &mut HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let d = dist(a[i], b[j]);
        let v = match (i, j) {
            (0, 0) => d,
            (0, _) => d.max(c(a, b, 0, j - 1, memo)),
            (_, 0) => d.max(c(a, b, i - 1, 0, memo)),
            _ => d.max(
                c(a, b, i - 1, j, memo)
                    .min(c(a, b, i, j - 1, memo))
                    .min(c(a, b, i - 1, j - 1, memo)),
            ),
        };
        memo.insert((i, j), v);
        v
    }
    c(a, b, a.len() - 1, b.len() - 1, &mut HashMap::new())
}

/// Recursion over explicit remaining trajectories `[ha, a[i+1..]]` and
/// `[hb, b[j+1..]]`, memoized on the indices and head coordinates.
pub fn edwp_rec(a: &[Pt], b: &[Pt]) -> f64 {
    type Key = (usize, usize, [u64; 4]);
    fn go(a: &[Pt], b: &[Pt], i: usize, j: usize, ha: Pt, hb: Pt, memo: &mut HashMap<Key, f64>) -> f64 {
        let (ra, rb) = (a.len() - 1 - i, b.len() - 1 - j);
        if ra == 0 && rb == 0 {
            return 0.0;
        }
        if ra == 0 || rb == 0 {
            return f64::INFINITY;
        }
        let key = (i, j, [ha[0].to_bits(), ha[1].to_bits(), hb[0].to_bits(), hb[1].to_bits()]);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let replace = seg_cost(ha, a[i + 1], hb, b[j + 1]) + go(a, b, i + 1, j + 1, a[i + 1], b[j + 1], memo);
        let p = project(b[j + 1], a[i], a[i + 1]);
        let split_a = seg_cost(ha, p, hb, b[j + 1]) + go(a, b, i, j + 1, p, b[j + 1], memo);
        let q = project(a[i + 1], b[j], b[j + 1]);
        let split_b = seg_cost(ha, a[i + 1], hb, q) + go(a, b, i + 1, j, a[i + 1], q, memo);
        let v = replace.min(split_a).min(split_b);
        memo.insert(key, v);
        v
    }
    go(a, b, 0, 0, a[0], b[0], &mut HashMap::new())
}
