//! Numerical toolkit for optimal control of McKean-Vlasov diffusions viewed
//! as control of their densities in an exponentially weighted Sobolev space.
//!
//! Grid-based work is one-dimensional. The particle simulator handles any
//! dimension.

pub mod calculus;
pub mod control;
pub mod densities;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod variational;
pub mod weightspace;

pub use error::{Error, Result};
