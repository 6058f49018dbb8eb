//! Reverse-mode automatic differentiation over dense `f64` tensors, plus
//! the Adam optimizer.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays it
//! in reverse from a scalar root. Parameters live in a [`ParamStore`] and are
//! bound onto a fresh tape for every optimization step.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
