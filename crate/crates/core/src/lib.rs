//! Contour-quadrature functional calculus for sectorial operators, discretized
//! Fuchs-type cone Laplacians, ellipticity checks, Hardy-kernel bounds and a
//! maximal-regularity solver for the cone heat equation.

pub mod calculus;
pub mod cli;
pub mod cone_laplacian;
pub mod ellipticity;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod hclass;
pub mod kernel_estimates;
pub mod sectors;

pub use error::{Error, Result};
