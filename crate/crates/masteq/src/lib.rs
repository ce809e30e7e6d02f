//! Adaptive solver for master equations dp/dt = A(t) p.
//!
//! The propagator is a Magnus expansion of order two or four whose
//! exponential is applied through an Arnoldi projection. Step size,
//! Krylov dimension and state-space truncation are all driven by one
//! budget: the a posteriori error bound assembled in `adjoint`. See the
//! README for the command-line entry points.

pub mod adjoint;
pub mod config;
pub mod controller;
pub mod error;
pub mod fsp;
pub mod krylov;
pub mod linalg;
pub mod magnus;
pub mod model;
pub mod problems;
pub mod report;

pub use error::{Error, Result};
