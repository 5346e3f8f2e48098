//! Finite-memory (sliding-window) reinforcement learning for finite POMDPs
//! with linear function approximation, together with exact oracles and
//! numerical error bounds.

// Negated comparisons reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ergodicity;
pub mod belief_grid;
pub mod bounds;
pub mod error;
pub mod features;
pub mod filter;
pub mod learners;
pub mod linear_fa;
pub mod fixtures;
pub mod model;
pub mod par;
pub mod quantize;
pub mod simulate;
pub mod stability;
pub mod window;
pub mod window_mdp;

pub use error::{Error, Result};
pub use model::{Belief, FinitePomdp};
pub use par::Exec;
pub use window::{WindowPolicy, WindowSpace};
