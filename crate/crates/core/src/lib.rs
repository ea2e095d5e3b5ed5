//! Receding-horizon generalized Nash equilibrium games.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod game;
pub mod io;
pub mod sim;
pub mod solver;
pub mod steady;

pub use error::{Error, Result};
