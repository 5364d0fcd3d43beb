//! MicroNet: low-FLOP image recognition networks built from factorized
//! convolutions and the Dynamic Shift-Max activation.

pub mod accounting;
pub mod arch;
pub mod autodiff;
pub mod bundle;
pub mod data;
pub mod error;
pub mod kernels;
pub mod factorized;
pub mod gradcheck;
pub mod probe;
pub mod shiftmax;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
