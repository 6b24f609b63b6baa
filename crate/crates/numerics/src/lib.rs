//! Minimal dense-tensor engine for the summarizer: `f64` matrices, a
//! reverse-mode differentiation tape, Adam, finite-difference checking and a
//! checksummed checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use error::{NumericsError, Result};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Gradients, Init, ParamId, ParamStore, Parameter};
pub use tensor::{Shape, Tensor};
