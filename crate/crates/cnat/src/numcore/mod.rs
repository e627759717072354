//! Minimal dense-tensor numeric core: a reverse-mode differentiation tape
//! over 2-D float tensors plus the Adam optimizer. Training runs in f32;
//! the same code instantiates at f64 for gradient verification.

mod adam;
pub mod gradcheck;
mod graph;
mod params;

pub use adam::AdamState;
pub use graph::{Graph, NodeId};
pub use params::{Param, ParamId, ParamStore};

use num_traits::Float;

/// Scalar element type of the numeric core. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + num_traits::NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
