//! Acoustic scene classification toolkit: log-mel front end, a
//! broadcast-residual classifier with frequency-wise normalization, training,
//! and a prune/quantize/distill compression pipeline with exact packed-size
//! accounting.

pub mod augment;
pub mod binio;
pub mod checkpoint;
pub mod compress;
pub mod conv;
pub mod data;
pub mod devicesim;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod norm;
pub mod pool;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Axis, Shape, Tensor};
