//! Minimal reverse-mode automatic differentiation over the handful of
//! operations the separator needs, plus the Adam optimizer.
//!
//! A [`Graph`] records operations eagerly; [`Graph::backward`] sweeps the
//! tape once in reverse and returns [`Gradients`] for the bound parameters.
//! The graph is generic over [`Real`] so the same forward code can be replayed
//! in `f64` for gradient checks.

mod adam;
mod graph;
mod real;
mod tensor;

pub use adam::{AdamState, DEFAULT_LR};
pub use graph::{Graph, Var, SI_SDR_EPS};
pub(crate) use graph::SiSdrParts;
pub use real::Real;
pub use tensor::{Gradients, ParamStore, Tensor};
