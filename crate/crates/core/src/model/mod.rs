//! Desk-scale hierarchical surrogate: local transformer encoders over
//! fixed-length segments, a global encoder over segment summaries, and
//! multi-task heads that reconstruct tool features and fuse them into the
//! score prediction. Gradients are derived by hand in [`layers`] and
//! [`network`].

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod stats;
pub mod train;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Preset};
pub use infer::{score_corpus, ScoreInput, Throughput};
pub use loss::{joint_loss, LossBreakdown, Target};
pub use network::{forward, global_encode, local_encode, masked_mean_pool, ForwardOutput, Mode};
pub use params::Parameters;
pub use stats::FeatureStats;
pub use train::{loss_and_gradients, train_loop, Example, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("token {0} outside the vocabulary")]
    Vocab(u16),
    #[error("contract has no valid segment")]
    EmptyContract,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence {
        step: u64,
        loss: f64,
        last_stable: Box<Parameters>,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
