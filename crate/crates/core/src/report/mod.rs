//! Attention heatmaps, permutation importance and run manifests.

pub mod heatmap;
pub mod importance;
pub mod manifest;

pub use heatmap::{bar_chart_svg, emit_heatmap, heatmap_svg, read_matrix_csv, write_matrix_csv};
pub use importance::{permutation_importance, Classifier, ImportanceReport, ImportanceScore};
pub use manifest::{content_hash, FileRecord, RunManifest};
