//! Simulation and quadrature toolkit for anisotropic stable-like jump
//! processes killed on leaving the upper half-space.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod nonlocal;
pub mod potential;
pub mod quad;
pub mod sim;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
