//! Space-time generalized multiscale finite elements for parabolic problems
//! `∂_t u − div(κ(x, t) ∇u) = f` with moving high-contrast coefficients.

pub mod cli;
pub mod coefficient;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod grid;
pub mod offline;
pub mod online;
pub mod pou;
pub mod snapshot;

pub use error::{Error, Result};
