//! Frequency-domain correction of quasi-periodic trajectories.

pub mod constants;
pub mod corrector;
pub mod dynamics;
pub mod error;
pub mod frames;
pub mod linalg;
pub mod propagation;
pub mod refine;
pub mod sensitivity;
pub mod spectrum;

pub use error::{FdcError, Result};
