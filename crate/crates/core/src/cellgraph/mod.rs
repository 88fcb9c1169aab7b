//! Grid cells, the transition graph they induce, and Node2Vec cell
//! embeddings.

mod graph;
mod grid;
mod skipgram;
mod walks;

pub use graph::CellGraph;
pub use grid::GridSpec;
pub use skipgram::{train_skipgram, CellEmbeddingTable, SkipGramConfig, SkipGramOutput};
pub use walks::{node2vec_walks, WalkConfig};
