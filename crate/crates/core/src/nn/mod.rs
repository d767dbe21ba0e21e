//! Minimal dense autodiff and optimization primitives.

mod adam;
mod graph;
mod matrix;
mod params;

pub use adam::Adam;
pub use graph::{gelu, Graph, Var};
pub(crate) use graph::LN_EPS;
pub use matrix::{log_softmax, Matrix};
pub use params::{ParamId, ParamStore};
