//! Stress concentration between two nearly touching rigid inclusions in a
//! Lamé system: explicit gap asymptotics, a quadratic finite-element solver
//! for the full problem, the blow-up factor matrices of the touching
//! configuration, and a harness that compares all of them.

pub mod asymptotic;
pub mod elasticity;
pub mod error;
pub mod factors;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod mesh;
pub mod quadrature;
pub mod reconstruction;

pub use error::{Error, Result};
