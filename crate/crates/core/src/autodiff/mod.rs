//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns every intermediate value. Operations append a node that
//! remembers its inputs and an adjoint rule; [`Graph::backward`] walks the
//! nodes once in reverse order. One graph per forward pass, one thread per
//! graph.

mod graph;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamStore, Parameter};
