//! Spectral solver and diagnostics for the modified Swift–Hohenberg flow
//! constrained to the unit sphere of `L²`.

pub mod analysis;
pub mod checks;
pub mod energy;
pub mod error;
pub mod integrators;
pub mod mild_solution;
pub mod model;
pub mod output;
pub mod snapshot;
pub mod spectral;

pub use error::{Error, Result};
