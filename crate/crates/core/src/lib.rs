//! Generalized Root Models: graphical models whose node conditionals are
//! exponential families in the root statistics `x^{1/j}`, with k-wise
//! interactions through sparse symmetric tensors.

pub mod cli;
pub mod error;
pub mod family;
pub mod gibbs;
pub mod io;
pub mod logpartition;
pub mod model;
pub mod numeric;
pub mod solver;
pub mod tensor;

pub use error::{GrmError, Result};
pub use family::{Family, Measure};
pub use tensor::SymTensor;
pub use model::GrmModel;
