//! Path-decoupled hyperbolic flow matching on the Lorentz manifold.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod inference;
pub mod lorentz;
pub mod optim;
pub mod training;
pub mod velocity;

pub use error::{HfmError, Result};
