//! Isogeometric magnetostatic solver for a permanent-magnet synchronous
//! machine with harmonic stator-rotor coupling, and an adjoint shape
//! optimizer for the harmonic distortion of the induced voltage.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod assembly;
pub mod commands;
pub mod config;
pub mod coupling;
pub mod error;
pub mod fourier;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod quadrature;
pub mod spline;

pub use error::{Error, Result};
