pub mod autodiff;
pub mod constraints;
pub mod datasets;
pub mod error;
pub mod evolution;
pub mod exprtree;
pub mod fitting;
pub mod harness;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
