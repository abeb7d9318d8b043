pub mod cli;
pub mod config;
pub mod dataset;
pub mod contraction;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod integrate;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
