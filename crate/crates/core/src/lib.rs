pub mod ami;
pub mod container;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rfn;
pub mod tensor;
pub mod tiling;
pub mod volume;

pub use error::{Error, Result};
