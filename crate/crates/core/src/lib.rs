//! Dirichlet Laplacian spectra of polyhedral layers and L-shaped waveguides.

pub mod analysis;
pub mod assembly;
pub mod eigensolve;
pub mod error;
pub mod geometry;
pub mod grid3d;
pub mod mesh2d;
pub mod sparse;

pub use error::{Error, Result};
