use serde::{Deserialize, Serialize};

use super::{dist, Pt};

/// How two points are judged to match under the threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMetric {
    #[default]
    Euclidean,
    /// Both coordinate differences within the threshold.
    Chebyshev,
}

#[inline]
pub(crate) fn matches(a: Pt, b: Pt, eps: f64, metric: MatchMetric) -> bool {
    match metric {
        MatchMetric::Euclidean => dist(a, b) <= eps,
        MatchMetric::Chebyshev => (a[0] - b[0]).abs() <= eps && (a[1] - b[1]).abs() <= eps,
    }
}

/// Edit Distance on Real sequences: unit insert/delete, substitution free
/// for matching points and 1 otherwise.
pub fn edr(a: &[Pt], b: &[Pt], eps: f64, metric: MatchMetric) -> usize {
    let m = b.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, &p) in a.iter().enumerate() {
        cur[0] = i + 1;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(!matches(p, b[j - 1], eps, metric));
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}
