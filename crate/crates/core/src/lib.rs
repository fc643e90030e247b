//! From-scratch selective state-space kernels and a small hybrid
//! convolution/SSM image classifier, all in 64-bit floats with paired
//! forward and backward passes that are verified against central finite
//! differences.

pub mod block;
pub mod checkpoint;
pub mod error;
pub mod labels;
pub mod model;
pub mod ops;
pub mod s6;
pub mod ss2d;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use labels::ClassLabel;
pub use tensor::Tensor;
