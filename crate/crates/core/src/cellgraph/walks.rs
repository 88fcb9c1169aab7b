use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::CellGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 80,
            p: 1.0,
            q: 1.0,
        }
    }
}

/// Second-order biased walks of at most `walk_length` nodes, returned as
/// node indices into `graph.nodes()`. Ordered by round, then start node.
pub fn node2vec_walks(graph: &CellGraph, cfg: &WalkConfig, seed: u64) -> Vec<Vec<usize>> {
    let n = graph.num_nodes();
    (0..cfg.walks_per_node * n)
        .into_par_iter()
        .map(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(job as u64);
            walk(graph, cfg, job % n, &mut rng)
        })
        .collect()
}

fn walk(graph: &CellGraph, cfg: &WalkConfig, start: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut w = Vec::with_capacity(cfg.walk_length);
    if cfg.walk_length == 0 {
        return w;
    }
    w.push(start);
    let unbiased = cfg.p == 1.0 && cfg.q == 1.0;
    let mut scratch: Vec<f64> = Vec::new();
    while w.len() < cfg.walk_length {
        let cur = *w.last().unwrap();
        let (nbrs, wts) = graph.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        scratch.clear();
        match (w.len() >= 2 && !unbiased).then(|| w[w.len() - 2]) {
            Some(prev) => {
                for (&x, &wt) in nbrs.iter().zip(wts) {
                    let alpha = if x == prev {
                        1.0 / cfg.p
                    } else if graph.has_edge(prev, x) {
                        1.0
                    } else {
                        1.0 / cfg.q
                    };
                    scratch.push(wt as f64 * alpha);
                }
            }
            None => scratch.extend(wts.iter().map(|&x| x as f64)),
        }
        let total: f64 = scratch.iter().sum();
        let mut u = rng.random_range(0.0..total);
        let mut pick = nbrs.len() - 1;
        for (i, &s) in scratch.iter().enumerate() {
            if u < s {
                pick = i;
                break;
            }
            u -= s;
        }
        w.push(nbrs[pick]);
    }
    w
}
