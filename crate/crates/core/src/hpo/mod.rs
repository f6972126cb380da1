//! Gaussian-process Bayesian optimization over hyperparameter spaces.

pub mod gp;
pub mod optimize;
pub mod space;

pub use gp::{expected_improvement, GaussianProcess};
pub use optimize::{
    branin, optimize, propose, random_search, read_history_csv, resume, write_history_csv, OptimizeResult, Trial,
    TrialStatus, BRANIN_MIN, DEFAULT_N_INIT,
};
pub use space::{Dim, DimKind, Divisible, Point, SearchSpace, Value};
