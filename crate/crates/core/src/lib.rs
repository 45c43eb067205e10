//! Numerical linearization certificates for random and stochastic differential equations.
//!
//! The crate is `no_std` with `alloc`. File formats, the command line and
//! parallel drivers live in the companion `lincert` crate.

#![no_std]

extern crate alloc;

pub mod conjugacy;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod randomize;
pub mod sampling;
pub mod sde;
pub mod spectrum;
pub mod systems;
pub mod timebase;

pub use error::{Error, Result};
