pub mod coeffs;
pub mod config;
pub mod discretize;
pub mod eig;
pub mod error;
pub mod gauge;
pub mod hsfc;
pub mod linalg;
pub mod model;
pub mod opexpand;
pub mod poly;
pub mod quad;
pub mod verify;

pub use error::{Error, Result};
pub use model::{MagneticField, Mode, ScalarField, TestFunction, TestFunctionKind, TorusDomain, VectorPotential};
