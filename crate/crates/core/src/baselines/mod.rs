//! Tree-ensemble baselines and cross-validated grid search.

pub mod booster;
pub mod cv;
pub mod forest;
pub mod tree;

pub use booster::{Booster, BoosterConfig};
pub use cv::{grid_search_cv, BoosterGrid, Candidate, CvResult, CvRow, ForestGrid, Grid};
pub use forest::{ForestConfig, RandomForest};
pub use tree::{DecisionTree, Node};
