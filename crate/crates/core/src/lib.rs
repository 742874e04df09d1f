//! Price elasticity estimation with a demand network that is monotone in
//! price by construction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod elasticity;
pub mod error;
pub mod exec;
pub mod model;
pub mod monodense;
pub mod numeric;
pub mod pipeline;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
