//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is rebuilt for every forward pass. Trainable arrays live in a
//! [`ParamStore`] and are pulled onto the tape with [`Tape::param`];
//! [`Tape::backward`] returns one gradient per store entry.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, SkippedEntry, WorstEntry};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{KinkSignature, Tape, Var};
