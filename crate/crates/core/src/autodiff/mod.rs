//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operator applied during a forward pass together
//! with its gradient rule. [`Tape::backward`] replays the record in reverse
//! topological order. Node handles are indices into the append-only tape, so
//! inputs always precede their consumers.

mod ops;
mod tape;

pub use ops::{broadcast_index, BinaryOp, Reduction};
pub use tape::{Backward, BackwardCtx, Gradients, Tape, Var};
