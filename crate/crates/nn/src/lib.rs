//! Dense `f64` numerics with reverse-mode automatic differentiation.
//!
//! The [`Graph`] is an eager tape: each op computes its forward value at
//! construction time, and [`Graph::backward`] sweeps the tape in reverse.
//! Trainable arrays live in a [`ParameterStore`] that is only mutated by the
//! optimiser between passes.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod tensorfile;

pub use error::{NnError, Result};
pub use gradcheck::{check_parameters, finite_diff_check, relative_error};
pub use graph::{evaluate_with_gradients, ConvGeom, Graph, Var};
pub use layers::{Activation, AdditiveAttention, Conv2d, Embedding, Linear, LstmCell, LstmState};
pub use optim::Adam;
pub use params::{Gradients, ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;
