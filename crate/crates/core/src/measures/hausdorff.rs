use super::{dist, Pt};

/// Directed distance with early abandoning: the inner scan for a point of
/// `a` stops once it drops below the running maximum.
fn directed(a: &[Pt], b: &[Pt]) -> f64 {
    let mut cmax = 0.0f64;
    for &p in a {
        let mut cmin = f64::INFINITY;
        for &q in b {
            let d = dist(p, q);
            if d < cmin {
                cmin = d;
                if cmin <= cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// Symmetric Hausdorff distance, Euclidean.
pub fn hausdorff(a: &[Pt], b: &[Pt]) -> f64 {
    directed(a, b).max(directed(b, a))
}
