//! Batched scaled dot-product attention kernel with key padding masks.
//!
//! Input is a packed `[groups * seq, 3 * dim]` matrix holding the query,
//! key and value projections side by side; each group is an independent
//! sequence of `seq` tokens and `dim` is split evenly across `heads`.

use super::scalar::{gemm, MatRef, Scalar};

/// Additive bias applied to padded keys before the softmax.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub groups: usize,
    pub seq: usize,
    pub heads: usize,
    pub dim: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn qkv_at(&self, g: usize, h: usize, part: usize) -> usize {
        g * self.seq * 3 * self.dim + part * self.dim + h * self.head_dim()
    }

    fn probs_at(&self, g: usize, h: usize) -> usize {
        (g * self.heads + h) * self.seq * self.seq
    }
}

/// Returns `(output [groups*seq, dim], probs [groups, heads, seq, seq])`.
///
/// Rows whose keys are all padded produce zero weights and zero output.
pub fn attention_forward<T: Scalar>(
    qkv: &[T],
    key_pad: &[bool],
    shape: AttentionShape,
) -> (Vec<T>, Vec<T>) {
    let AttentionShape {
        groups,
        seq,
        heads,
        dim,
    } = shape;
    let dk = shape.head_dim();
    let scale = T::lit(1.0 / (dk as f64).sqrt());
    let bias = T::lit(MASK_BIAS);
    let mut out = vec![T::zero(); groups * seq * dim];
    let mut probs = vec![T::zero(); groups * heads * seq * seq];
    for g in 0..groups {
        let pad = &key_pad[g * seq..(g + 1) * seq];
        let any_valid = pad.iter().any(|p| !p);
        if !any_valid {
            continue;
        }
        for h in 0..heads {
            let q = MatRef {
                data: qkv,
                offset: shape.qkv_at(g, h, 0),
                rows: seq,
                cols: dk,
                rs: 3 * dim,
                cs: 1,
            };
            let k = MatRef {
                offset: shape.qkv_at(g, h, 1),
                ..q
            };
            let v = MatRef {
                offset: shape.qkv_at(g, h, 2),
                ..q
            };
            let p_off = shape.probs_at(g, h);
            gemm(scale, q, k.t(), T::zero(), &mut probs, p_off, seq);
            for i in 0..seq {
                let row = &mut probs[p_off + i * seq..p_off + (i + 1) * seq];
                for (s, &masked) in row.iter_mut().zip(pad) {
                    if masked {
                        *s = *s + bias;
                    }
                }
                softmax_in_place(row);
            }
            let p = MatRef {
                data: &probs,
                offset: p_off,
                rows: seq,
                cols: seq,
                rs: seq,
                cs: 1,
            };
            gemm(T::one(), p, v, T::zero(), &mut out, g * seq * dim + h * dk, dim);
        }
    }
    (out, probs)
}

/// Accumulates the gradient with respect to `qkv` into `dqkv`.
pub fn attention_backward<T: Scalar>(
    qkv: &[T],
    probs: &[T],
    dout: &[T],
    shape: AttentionShape,
    dqkv: &mut [T],
) {
    let AttentionShape {
        groups,
        seq,
        heads,
        dim,
    } = shape;
    let dk = shape.head_dim();
    let scale = T::lit(1.0 / (dk as f64).sqrt());
    let mut dp = vec![T::zero(); seq * seq];
    for g in 0..groups {
        for h in 0..heads {
            let p_off = shape.probs_at(g, h);
            let p = MatRef {
                data: probs,
                offset: p_off,
                rows: seq,
                cols: seq,
                rs: seq,
                cs: 1,
            };
            if probs[p_off..p_off + seq * seq].iter().all(|&x| x == T::zero()) {
                continue;
            }
            let dout_gh = MatRef {
                data: dout,
                offset: g * seq * dim + h * dk,
                rows: seq,
                cols: dk,
                rs: dim,
                cs: 1,
            };
            let q = MatRef {
                data: qkv,
                offset: shape.qkv_at(g, h, 0),
                rows: seq,
                cols: dk,
                rs: 3 * dim,
                cs: 1,
            };
            let k = MatRef {
                offset: shape.qkv_at(g, h, 1),
                ..q
            };
            let v = MatRef {
                offset: shape.qkv_at(g, h, 2),
                ..q
            };
            // dV += P^T dOut
            gemm(T::one(), p.t(), dout_gh, T::one(), dqkv, shape.qkv_at(g, h, 2), 3 * dim);
            // dP = dOut V^T
            gemm(T::one(), dout_gh, v.t(), T::zero(), &mut dp, 0, seq);
            // dS = P * (dP - rowsum(P * dP))
            for i in 0..seq {
                let prow = &probs[p_off + i * seq..p_off + (i + 1) * seq];
                let drow = &mut dp[i * seq..(i + 1) * seq];
                let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pv) in drow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot);
                }
            }
            let ds = MatRef::row_major(&dp, seq, seq);
            gemm(scale, ds, k, T::one(), dqkv, shape.qkv_at(g, h, 0), 3 * dim);
            gemm(scale, ds.t(), q, T::one(), dqkv, shape.qkv_at(g, h, 1), 3 * dim);
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(qkv: &[f64], pad: &[bool], s: AttentionShape) -> Vec<f64> {
        let dk = s.head_dim();
        let mut out = vec![0.0; s.groups * s.seq * s.dim];
        for g in 0..s.groups {
            for h in 0..s.heads {
                for i in 0..s.seq {
                    let qi = |c: usize| qkv[(g * s.seq + i) * 3 * s.dim + h * dk + c];
                    let mut w = vec![0.0; s.seq];
                    let mut any = false;
                    for j in 0..s.seq {
                        if pad[g * s.seq + j] {
                            w[j] = f64::NEG_INFINITY;
                            continue;
                        }
                        any = true;
                        let kj = |c: usize| qkv[(g * s.seq + j) * 3 * s.dim + s.dim + h * dk + c];
                        w[j] = (0..dk).map(|c| qi(c) * kj(c)).sum::<f64>() / (dk as f64).sqrt();
                    }
                    if !any {
                        continue;
                    }
                    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for c in 0..dk {
                        let mut acc = 0.0;
                        for j in 0..s.seq {
                            acc += e[j] / z
                                * qkv[(g * s.seq + j) * 3 * s.dim + 2 * s.dim + h * dk + c];
                        }
                        out[(g * s.seq + i) * s.dim + h * dk + c] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_with_padding() {
        let shape = AttentionShape {
            groups: 2,
            seq: 6,
            heads: 2,
            dim: 4,
        };
        let n = shape.groups * shape.seq * 3 * shape.dim;
        let qkv: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
        let mut pad = vec![false; 12];
        pad[4] = true;
        pad[5] = true;
        pad[11] = true;
        let (out, probs) = attention_forward(&qkv, &pad, shape);
        let expect = naive(&qkv, &pad, shape);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in probs.chunks(6) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_padded_group_is_zero() {
        let shape = AttentionShape {
            groups: 1,
            seq: 3,
            heads: 1,
            dim: 2,
        };
        let qkv = vec![1.0f32; 18];
        let (out, probs) = attention_forward(&qkv, &[true, true, true], shape);
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(probs.iter().all(|&v| v == 0.0));
    }
}
