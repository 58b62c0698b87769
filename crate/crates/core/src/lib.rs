pub mod bifurcation;
pub mod bundle;
pub mod dichotomy;
pub mod error;
pub mod field;
pub mod linalg;
pub mod fredholm;
pub mod matrixcore;
pub mod random;
pub mod sequence;

pub use error::{Error, Result};
pub use linalg::{RealMatrix, RealVector};
