//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Value`] is a reference-counted graph node. Operations record their
//! inputs and a vector-Jacobian closure only when some input requires a
//! gradient, so inference graphs carry no history. [`backward`] sweeps the
//! graph from a scalar loss and *adds* into stored gradients; clearing is the
//! optimizer's job ([`adam_step`]).

mod adam;
pub mod ops;
mod tensor;
mod value;

pub use adam::{adam_step, AdamState};
pub use tensor::Tensor;
pub use value::{backward, detach, BackwardFn, Value};
