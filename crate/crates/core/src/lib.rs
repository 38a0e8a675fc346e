//! Function approximation by Sturm-Liouville eigenfunctions along the field
//! lines of a learned vector field.

pub mod dual;
pub mod error;
pub mod fieldline;
pub mod gradflow;
pub mod learner;
pub mod netfuncs;
pub mod odeint;
pub mod slcore;

pub use error::{DslError, Result};
