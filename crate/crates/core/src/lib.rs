pub mod cli;
pub mod dynamics;
pub mod end_analysis;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod layer_potential;
pub mod scaled_solver;
pub mod spectral_core;

pub use error::{Error, Result};
