pub mod autodiff;
pub mod error;
pub mod generator;
pub mod inference;
pub mod model;
pub mod tensor;
pub mod text;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
