//! Slow-manifold reduction of a two-population stochastic rate model,
//! with 1D and 2D Fokker-Planck solvers and a Monte Carlo SDE oracle.

pub mod analysis;
pub mod dynsys;
pub mod error;
pub mod fp1d;
pub mod fp2d;
pub mod histogram;
pub mod mcsde;
pub mod model;
pub mod reduction;

pub use error::{Error, Result};
