//! Dense tensors, differentiable operations and gradient checking.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
mod param;
mod scalar;

pub use array::Tensor;
pub use graph::{Graph, Var};
pub use ops::{Direction, Pad2d};
pub use param::{Buffer, BufferId, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
