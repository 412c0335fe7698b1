//! Hierarchical recurrent forecasting for index hierarchies such as a
//! consumer price index tree.

pub mod baselines;
pub mod cells;
pub mod error;
pub mod eval;
pub mod hrnn;
pub mod modelfile;
pub mod panel;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
