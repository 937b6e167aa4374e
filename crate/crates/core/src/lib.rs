pub mod error;
pub mod eval;
pub mod features;
pub mod glyphset;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
