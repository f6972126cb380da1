//! Schema, loading, imputation, encoding and stratified splitting.

pub mod dataset;
pub mod encode;
pub mod impute;
pub mod schema;
pub mod split;

pub use dataset::{load_dataset, read_dataset, Column, Dataset};
pub use encode::{encode, fit_stats, ColumnMeta, EncodedMatrix, FeatureStats, NormalizationStats};
pub use impute::{impute_default, impute_group_mean};
pub use schema::{CrashType, FeatureGroup, FeatureKind, FeatureSchema, FeatureSpec, NUM_CLASSES};
pub use split::{largest_remainder, stratified_kfold, stratified_split, SplitIndices};
