pub mod cli;
pub mod encoding;
pub mod error;
pub mod events;
pub mod gradcheck;
pub mod graph;
pub mod hierarchy;
pub mod model;
pub mod special;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Grads, Graph, ParamId, ParamStore, Var};
pub use tensor::Tensor;
