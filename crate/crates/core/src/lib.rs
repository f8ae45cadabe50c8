//! Tank-cascade hydraulics: a semi-implicit control-volume emulator and
//! data-free physics-informed neural network solvers (one shared network, or
//! one network per node) trained against the same governing equations.

pub mod cli;
pub mod config;
pub mod emulator;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod physics;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
