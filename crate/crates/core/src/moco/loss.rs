use crate::error::{Error, Result};
use crate::numeric::{Axis, Graph, Scalar, Var};

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero-norm vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// InfoNCE for one query: `-s_k/tau + log(exp(s_k/tau) + sum_n exp(s_n/tau))`
/// with cosine similarities. `queue` holds `N` rows of `zq.len()` values.
pub fn info_nce(zq: &[f64], zk: &[f64], queue: &[f64], tau: f64) -> Result<f64> {
    let d = zq.len();
    if d == 0 || zk.len() != d || queue.len() % d != 0 {
        return Err(Error::shape("info_nce", format!("q {d}, k {}, queue {}", zk.len(), queue.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let pos = cosine(zq, zk)? / tau;
    let mut logits = vec![pos];
    for n in queue.chunks(d) {
        logits.push(cosine(zq, n)? / tau);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - pos)
}

/// Batched InfoNCE on the tape. `zq` is the raw `[B, d]` query output;
/// `keys` (`[B, d]`) and `queue` (`[N, d]`) must already be unit rows.
/// Returns the batch-mean loss.
pub fn info_nce_graph<T: Scalar>(g: &mut Graph<T>, zq: Var, keys: Var, queue: Var, tau: f64) -> Result<Var> {
    let q = g.l2_normalize(zq);
    let pos = g.row_dot(q, keys)?;
    let neg = g.matmul(q, queue, true)?;
    let logits = g.concat(pos, neg, Axis::Cols)?;
    let logits = g.scale(logits, 1.0 / tau);
    let b = g.shape(zq).0;
    g.cross_entropy(logits, &vec![0; b])
}

/// Rescales each `dim`-wide row to unit norm in place.
pub fn normalize_rows<T: Scalar>(values: &mut [T], dim: usize) -> Result<()> {
    for (i, row) in values.chunks_mut(dim.max(1)).enumerate() {
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::Numeric(format!("row {i} has norm {n:?}")));
        }
        row.iter_mut().for_each(|v| *v = *v / n);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_examples() {
        let q = [1.0, 0.0];
        let l = info_nce(&q, &q, &[0.0, 1.0], 1.0).unwrap();
        let want = -1.0 + (1f64.exp() + 1.0).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);

        let l = info_nce(&q, &q, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 0.3).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let l = info_nce(&q, &q, &[0.0, 1.0], 0.05).unwrap();
        assert!((l - (-20f64).exp().ln_1p()).abs() < 1e-15);
        assert!((l - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn zero_norm_is_an_error() {
        assert!(matches!(info_nce(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 1.0), Err(Error::Domain(_))));
        assert!(info_nce(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(normalize_rows(&mut [1.0f32, 0.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn graph_matches_closed_form() {
        let zq = vec![0.3, -1.2, 0.5, 2.0, 0.1, 0.4];
        let mut keys = vec![0.2, -1.0, 0.9, 1.5, -0.3, 0.2];
        let mut queue = vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, -0.5, 0.2, 0.1, 0.3, 0.3, 0.3];
        normalize_rows(&mut keys, 3).unwrap();
        normalize_rows(&mut queue, 3).unwrap();
        let mut g = Graph::<f64>::new();
        let q = g.constant(zq.clone(), 2, 3).unwrap();
        let k = g.constant(keys.clone(), 2, 3).unwrap();
        let n = g.constant(queue.clone(), 4, 3).unwrap();
        let l = info_nce_graph(&mut g, q, k, n, 0.07).unwrap();
        let want = (info_nce(&zq[..3], &keys[..3], &queue, 0.07).unwrap()
            + info_nce(&zq[3..], &keys[3..], &queue, 0.07).unwrap())
            / 2.0;
        assert!((g.value(l)[0] - want).abs() < 1e-12);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, 3).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn scale_invariant(q in vec3(), k in vec3(), n1 in vec3(), n2 in vec3(), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let queue: Vec<f64> = n1.iter().chain(&n2).copied().collect();
            let l = info_nce(&q, &k, &queue, 0.1).unwrap();
            let qs: Vec<f64> = q.iter().map(|v| v * a).collect();
            let ks: Vec<f64> = k.iter().map(|v| v * b).collect();
            let r = info_nce(&qs, &ks, &queue, 0.1).unwrap();
            prop_assert!((l - r).abs() < 1e-6);
        }

        #[test]
        fn nonnegative_when_positive_is_not_best(q in vec3(), k in vec3(), n in vec3()) {
            let l = info_nce(&q, &k, &n, 0.5).unwrap();
            if cosine(&q, &k).unwrap() <= cosine(&q, &n).unwrap() {
                prop_assert!(l >= 0.0);
            }
        }
    }

    #[test]
    fn vanishes_for_aligned_pair_at_small_tau() {
        let q = [0.6, 0.8];
        let l = info_nce(&q, &q, &[0.8, -0.6, -0.6, -0.8], 0.01).unwrap();
        assert!(l < 1e-20 || l.abs() < 1e-12);
    }
}
