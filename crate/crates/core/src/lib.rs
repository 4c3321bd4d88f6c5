pub mod adjoint;
pub mod dynamics;
pub mod error;
pub mod measure;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
