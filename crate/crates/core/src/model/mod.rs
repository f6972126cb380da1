//! The feature-group transformer, its group partition and checkpoints.

pub mod attention;
pub mod checkpoint;
pub mod partition;
pub mod transformer;

pub use attention::{aggregate_attention, aggregate_by_class, AttentionRecord, ClassAttention};
pub use checkpoint::Checkpoint;
pub use partition::{partition_columns, GroupPartition};
pub use transformer::{FgttConfig, FgttModel};
