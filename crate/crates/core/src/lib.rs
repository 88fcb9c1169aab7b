//! Trajectory similarity learning: movement-semantics features over a
//! cell graph, a patch-based hierarchical transformer encoder trained by
//! momentum contrast, classic distance measures, and evaluation tasks.

pub mod augment;
pub mod cellgraph;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod measures;
pub mod moco;
pub mod movsem;
pub mod numeric;
pub mod pipeline;
pub mod prepare;
pub mod tasks;

pub use error::{Error, Result};

pub use config::RunConfig;
pub use data::{Point, RawTrajectory, Region};
pub use encoder::{AttentionMode, Encoder, EncoderConfig};
pub use measures::Measure;
pub use pipeline::{Corpus, Featurizer, TrajectoryModel};
pub use tasks::Embedder;
