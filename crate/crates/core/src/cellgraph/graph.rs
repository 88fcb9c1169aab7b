use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Directed transition-count graph in CSR form. Node `k` is cell
/// `nodes[k]`; out-edges of `k` are `targets[offsets[k]..offsets[k+1]]`,
/// sorted by target index.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CellGraph {
    nodes: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<u64>,
}

impl CellGraph {
    /// Counts consecutive transitions, self-loops included.
    pub fn build(seqs: &[Vec<u32>]) -> Self {
        let merge = |mut a: BTreeMap<(u32, u32), u64>, b: BTreeMap<(u32, u32), u64>| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        };
        let counts = seqs
            .par_iter()
            .fold(BTreeMap::new, |mut m, s| {
                for w in s.windows(2) {
                    *m.entry((w[0], w[1])).or_insert(0u64) += 1;
                }
                m
            })
            .reduce(BTreeMap::new, merge);
        let nodes: BTreeSet<u32> = seqs.iter().flatten().copied().collect();
        Self::from_parts(nodes, counts)
    }

    fn from_parts(nodes: BTreeSet<u32>, counts: BTreeMap<(u32, u32), u64>) -> Self {
        let nodes: Vec<u32> = nodes.into_iter().collect();
        let mut offsets = vec![0usize; nodes.len() + 1];
        let mut targets = Vec::with_capacity(counts.len());
        let mut weights = Vec::with_capacity(counts.len());
        let index = |c: u32| nodes.binary_search(&c).expect("edge endpoint is a node");
        for (&(s, d), &w) in &counts {
            offsets[index(s) + 1] += 1;
            targets.push(index(d));
            weights.push(w);
        }
        for k in 0..nodes.len() {
            offsets[k + 1] += offsets[k];
        }
        CellGraph {
            nodes,
            offsets,
            targets,
            weights,
        }
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    pub fn index_of(&self, cell: u32) -> Option<usize> {
        self.nodes.binary_search(&cell).ok()
    }

    /// Out-neighbor indices and weights of node index `k`.
    pub fn neighbors(&self, k: usize) -> (&[usize], &[u64]) {
        let r = self.offsets[k]..self.offsets[k + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.neighbors(from).0.binary_search(&to).is_ok()
    }

    pub fn weight(&self, src: u32, dst: u32) -> Option<u64> {
        let (s, d) = (self.index_of(src)?, self.index_of(dst)?);
        let (t, w) = self.neighbors(s);
        t.binary_search(&d).ok().map(|i| w[i])
    }

    /// `(src cell, dst cell, weight)` in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        (0..self.nodes.len()).flat_map(move |k| {
            let (t, w) = self.neighbors(k);
            t.iter().zip(w).map(move |(&d, &w)| (self.nodes[k], self.nodes[d], w))
        })
    }

    /// Edge-list text: `src dst weight` per line; nodes without out- or
    /// in-edges are written as a lone id.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let mut touched = vec![false; self.nodes.len()];
        for k in 0..self.nodes.len() {
            let (t, _) = self.neighbors(k);
            if !t.is_empty() {
                touched[k] = true;
            }
            for &d in t {
                touched[d] = true;
            }
        }
        for (k, _) in touched.iter().enumerate().filter(|(_, &t)| !t) {
            let _ = writeln!(s, "{}", self.nodes[k]);
        }
        for (a, b, w) in self.edges() {
            let _ = writeln!(s, "{a} {b} {w}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut nodes = BTreeSet::new();
        let mut counts = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("edge list line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
            match f.as_slice() {
                [a] => {
                    nodes.insert(num(a)? as u32);
                }
                [a, b, w] => {
                    let (a, b, w) = (num(a)? as u32, num(b)? as u32, num(w)?);
                    if w == 0 {
                        return Err(bad());
                    }
                    nodes.insert(a);
                    nodes.insert(b);
                    *counts.entry((a, b)).or_insert(0) += w;
                }
                _ => return Err(bad()),
            }
        }
        Ok(Self::from_parts(nodes, counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_edge_list(&text)
    }
}
