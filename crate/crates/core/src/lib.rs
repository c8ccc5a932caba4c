extern crate openblas_src;

pub mod admm;
pub mod analysis;
pub mod conic;
pub mod error;
pub mod grouping;
pub mod interconnect;
pub mod localization;
pub mod lti;
pub mod matrixcore;
pub mod synthesis;
pub mod multiplier;

pub use error::{Error, Result};
