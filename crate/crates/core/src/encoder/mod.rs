//! Patch-based hierarchical trajectory encoder and its flat baseline.

pub mod flops;
pub mod model;
pub mod patch;

pub use flops::{attention_flops, model_flops};
pub use model::{AttentionMode, Encoder, EncoderConfig};
pub use patch::{make_patches, PatchedSequence};
