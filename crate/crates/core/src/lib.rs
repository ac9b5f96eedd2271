//! Knowledge-graph embedding with a relation-learning head.
//!
//! Scorers (DistMult, ConvE, TransE), the relation-learning head, filtered
//! ranking evaluation and the training/evaluation driver, all on top of a
//! small f64 autodiff engine.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalrank;
pub mod grl;
pub mod kgdata;
pub mod model;
pub mod numcore;
pub mod scorers;
pub mod train;

pub use error::{Error, Result};
