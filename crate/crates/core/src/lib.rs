pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod hpo;
pub mod model;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{FgttError, Result};
