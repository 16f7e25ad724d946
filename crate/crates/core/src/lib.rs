//! Numerical laboratory for semilinear SPDEs of Burgers and reaction-diffusion
//! type driven by space-time white noise on `[0,1]` with Dirichlet boundaries.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod green;
pub mod grid;
pub mod noise;
pub mod rate;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Control, GridSpec, PathField, SpaceField};
