//! Split-computing semantic segmentation: tensor kernels, decoder heads,
//! learned feature compression, cost analysis and the car/cloud harness.

pub mod analysis;
pub mod codec;
pub mod error;
pub mod harness;
pub mod image;
pub mod init;
pub mod model;
pub mod nn;
pub mod params;
pub mod system;
pub mod tensor;
pub mod weights;
mod wire;

pub use error::*;
pub use tensor::Tensor;
