pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod retrieval;
pub mod seeds;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
