//! Attribute and context-aware sequential recommendation with proxy-based
//! item representations.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scorer;
pub mod seq;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
