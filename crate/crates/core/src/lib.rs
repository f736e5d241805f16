//! Matrix-oriented IMEX time steppers for a phase-field pitting corrosion
//! model on rectangular 2D/3D grids, with iterative variants for domains
//! containing holes and tools to analyse their convergence.

pub mod analysis;
pub mod error;
pub mod export;
pub mod grid;
pub mod holes;
pub mod model;
pub mod rect;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
