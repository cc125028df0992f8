//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    check_gradients, grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck,
};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
