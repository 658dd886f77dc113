//! Recovery of a low-rank matrix plus a sparse vector from linear
//! measurements with amenable nonconvex regularizers, solved by
//! alternating proximal gradient descent.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod observe;
pub mod regularizers;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
