//! Reflection of a single guided mode at a turning point of a slowly opening waveguide
//! with a randomly perturbed wall.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod noise;
pub mod propagator;
pub mod pulse;
pub mod quad;
pub mod reflection;
pub mod specfun;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
