//! Loss, metrics, optimizers and the training loop.

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use loss::{focal_loss, FocalLossParams};
pub use metrics::{compute_metrics, ClassMetrics, Metrics};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{evaluate, train, train_with_progress, EpochRecord, Labeled, TrainConfig, TrainReport};
