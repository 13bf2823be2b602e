//! Analysis and simulation of dissipative Hamiltonian descriptor systems
//! `E x' = A Q x` in finite dimensions.

pub mod error;
pub mod integrate;
pub mod json;
pub mod linalg;
pub mod models;
pub mod pencil;
pub mod ph1d;
pub mod random;
pub mod reduction;
pub mod saddle;

pub use error::{Error, Result};
