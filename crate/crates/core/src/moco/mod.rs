//! Momentum-contrast pretraining: InfoNCE against a queue of negatives,
//! with a key encoder that tracks the query encoder by EMA.

pub mod loss;
pub mod queue;
pub mod train;

pub use loss::{info_nce, info_nce_graph, normalize_rows};
pub use queue::Queue;
pub use train::{momentum_update, pretrain, write_loss_log, LossRecord, PretrainConfig, PretrainOutput, TrainState};
