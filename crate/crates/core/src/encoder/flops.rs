//! Closed-form multiply-add counts.

use super::model::{AttentionMode, EncoderConfig};

/// Multiply-adds in the attention score and weighting products for one
/// sequence of length `len`.
pub fn attention_flops(len: usize, patch: usize, d_h: usize, mode: AttentionMode) -> u64 {
    let (l, p, d) = (len as u64, patch.max(1) as u64, d_h as u64);
    match mode {
        AttentionMode::Flat => 2 * l * l * d,
        AttentionMode::Hierarchical => {
            let m = l.div_ceil(p);
            m * 2 * p * p * d + 2 * m * m * d
        }
    }
}

/// Projections, feed-forward and attention products of one block over
/// `groups` sequences of `seq` tokens.
fn block_flops(groups: u64, seq: u64, d: u64, ffn: u64) -> u64 {
    let tokens = groups * seq;
    tokens * (4 * d * d + 2 * d * ffn) + groups * 2 * seq * seq * d
}

/// Multiply-adds of a full forward pass for one sequence of length `len`.
pub fn model_flops(config: &EncoderConfig, len: usize) -> u64 {
    let (d, ffn) = (config.d_h as u64, config.ffn_dim as u64);
    let l = len as u64;
    let input = l * config.d_in as u64 * d;
    match config.mode {
        AttentionMode::Flat => input + config.flat_layers as u64 * block_flops(1, l, d, ffn),
        AttentionMode::Hierarchical => {
            let p = config.patch.max(1) as u64;
            let m = l.div_ceil(p);
            input + block_flops(m, p, d, ffn) + block_flops(1, m, d, ffn)
        }
    }
}
