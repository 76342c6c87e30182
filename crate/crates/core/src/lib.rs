pub mod autograd;
pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Extents, LightField};
pub use tensor::{DType, Real, Tensor};
