//! Reverse-mode automatic differentiation, the Adam optimizer, and a
//! finite-difference gradient checker.
//!
//! Forward passes are recorded on a [`Tape`]; a [`Session`] binds a
//! [`ParamStore`] to a tape so model code can look parameters up by name and
//! get per-parameter adjoints back from [`Session::backward`].

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{GradCheck, GradCheckReport, TensorCheck};
pub use params::{ParamStore, Session};
pub use tape::{log_sum_exp, sigmoid, softmax_in_place, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
