//! Dense tensors, a reverse-mode tape and a finite-difference gradient checker.

pub mod gradcheck;
pub mod param;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, ParamCheck};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use tape::{ElementwiseFn, Gradients, Tape, Var};
pub use tensor::Tensor2;
