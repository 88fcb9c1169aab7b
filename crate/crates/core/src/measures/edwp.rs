//! Edit Distance with Projections.
//!
//! Segments are matched pairwise at cost `rep * cov`, where `rep` sums the
//! start-to-start and end-to-end distances and `cov` sums the two segment
//! lengths. Instead of replacing two whole segments, either trajectory may
//! first be split at the projection of the other's next point onto its
//! current segment. Projections are taken onto the full original segment,
//! which keeps the state space at `3 * n * m`.

use super::{dist, Pt};
use crate::error::{Error, Result};

pub(crate) fn project(p: Pt, u: Pt, v: Pt) -> Pt {
    let (ex, ey) = (v[0] - u[0], v[1] - u[1]);
    let len2 = ex * ex + ey * ey;
    if len2 == 0.0 {
        return u;
    }
    let t = (((p[0] - u[0]) * ex + (p[1] - u[1]) * ey) / len2).clamp(0.0, 1.0);
    [u[0] + t * ex, u[1] + t * ey]
}

#[inline]
pub(crate) fn seg_cost(a0: Pt, a1: Pt, b0: Pt, b1: Pt) -> f64 {
    (dist(a0, b0) + dist(a1, b1)) * (dist(a0, a1) + dist(b0, b1))
}

pub fn edwp(a: &[Pt], b: &[Pt]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Domain(format!(
            "EDwP needs at least 2 points per trajectory (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (n, m) = (a.len(), b.len());
    let idx = |i: usize, j: usize| i * m + j;
    // f[mode][i*m + j]: mode 0 = both heads original, 1 = a's head is the
    // projection of b[j] onto a[i]a[i+1], 2 = b's head is the projection
    // of a[i] onto b[j]b[j+1].
    let mut f = [vec![f64::INFINITY; n * m], vec![f64::INFINITY; n * m], vec![f64::INFINITY; n * m]];
    f[0][idx(n - 1, m - 1)] = 0.0;
    for i in (0..n - 1).rev() {
        for j in (0..m - 1).rev() {
            for mode in 0..3 {
                let ha = if mode == 1 { project(b[j], a[i], a[i + 1]) } else { a[i] };
                let hb = if mode == 2 { project(a[i], b[j], b[j + 1]) } else { b[j] };
                let rep = seg_cost(ha, a[i + 1], hb, b[j + 1]) + f[0][idx(i + 1, j + 1)];
                let p = project(b[j + 1], a[i], a[i + 1]);
                let ins_a = seg_cost(ha, p, hb, b[j + 1]) + f[1][idx(i, j + 1)];
                let q = project(a[i + 1], b[j], b[j + 1]);
                let ins_b = seg_cost(ha, a[i + 1], hb, q) + f[2][idx(i + 1, j)];
                f[mode][idx(i, j)] = rep.min(ins_a).min(ins_b);
            }
        }
    }
    Ok(f[0][0])
}
