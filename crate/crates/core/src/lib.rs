//! Transient thermal topology optimisation with time-parallel primal and
//! adjoint solves.

pub mod design;
pub mod driver;
pub mod error;
pub mod fem;
pub mod mma;
pub mod parareal;
pub mod sparse;
pub mod trajectory;

pub use error::{Error, Result};
