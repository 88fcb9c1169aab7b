//! Layer building blocks over a [`ParamSet`]: each layer stores indices
//! into the set and runs against the variables produced by
//! [`ParamSet::bind`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamSet, Parameter};
use super::scalar::Scalar;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn new<T: Scalar, R: Rng>(set: &mut ParamSet<T>, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = (0..d_in * d_out).map(|_| T::lit(rng.random_range(-a..a))).collect();
        let weight = set.push(Parameter::new(format!("{name}.weight"), vec![d_in, d_out], w));
        let bias = set.push(Parameter::new(format!("{name}.bias"), vec![d_out], vec![T::zero(); d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.weight], false)?;
        g.add_row(y, vars[self.bias])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(set: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        let gamma = set.push(Parameter::new(format!("{name}.gamma"), vec![dim], vec![T::one(); dim]));
        let beta = set.push(Parameter::new(format!("{name}.beta"), vec![dim], vec![T::zero(); dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, vars[self.gamma], vars[self.beta])
    }
}

/// Multi-head self-attention: fused QKV projection, masked scaled
/// dot-product attention, output projection.
#[derive(Clone, Copy, Debug)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar, R: Rng>(set: &mut ParamSet<T>, rng: &mut R, name: &str, dim: usize, heads: usize) -> Self {
        SelfAttention {
            qkv: Linear::new(set, rng, &format!("{name}.qkv"), dim, 3 * dim),
            out: Linear::new(set, rng, &format!("{name}.out"), dim, dim),
            heads,
        }
    }

    /// `x` is `[groups*seq, dim]`; `key_pad[r]` marks row `r` as padding.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        key_pad: &[bool],
        groups: usize,
        seq: usize,
    ) -> Result<Var> {
        let qkv = self.qkv.forward(g, vars, x)?;
        let att = g.attention(qkv, key_pad, groups, seq, self.heads)?;
        self.out.forward(g, vars, att)
    }
}

/// Pre-norm transformer encoder block:
/// `x + Attn(LN(x))`, then `x + FFN(LN(x))` with a ReLU feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderBlock {
    pub fn new<T: Scalar, R: Rng>(
        set: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
    ) -> Self {
        EncoderBlock {
            ln1: LayerNorm::new(set, &format!("{name}.ln1"), dim),
            attn: SelfAttention::new(set, rng, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(set, &format!("{name}.ln2"), dim),
            ff1: Linear::new(set, rng, &format!("{name}.ff1"), dim, ffn_dim),
            ff2: Linear::new(set, rng, &format!("{name}.ff2"), ffn_dim, dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        key_pad: &[bool],
        groups: usize,
        seq: usize,
    ) -> Result<Var> {
        let h = self.ln1.forward(g, vars, x)?;
        let h = self.attn.forward(g, vars, h, key_pad, groups, seq)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, vars, x)?;
        let h = self.ff1.forward(g, vars, h)?;
        let h = g.relu(h);
        let h = self.ff2.forward(g, vars, h)?;
        g.add(x, h)
    }
}

/// Fixed sinusoidal position table, `rows x dim` row-major.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; rows * dim];
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            t[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    t
}
