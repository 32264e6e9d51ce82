//! Wasserstein distributionally robust two-stage linear programs.
pub mod ambiguity;
pub mod bench;
pub mod conic;
pub mod constraint_dr;
pub mod error;
pub mod lp;
pub mod norm;
pub mod objective_dr;
pub mod problem;
pub mod worst_case;

pub use error::{Error, Result};
pub use norm::Norm;
