//! Deterministic `f64` tensors with define-by-run reverse-mode differentiation,
//! the ADADELTA optimizer, and the `SPDN1` checkpoint container.

pub mod check;
pub mod checkpoint;
pub mod conv;
mod error;
pub mod kernels;
pub mod linalg;
mod ops;
pub mod optim;
mod params;
pub mod sample;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use linalg::LuFactors;
pub use ops::{sigmoid, softmax_values};
pub use optim::{Adadelta, AdadeltaState};
pub use params::{ParamGrads, ParamId, ParamStore, Session};
pub use tape::{ReadLayout, Tape, Var};
pub use tensor::Tensor;
