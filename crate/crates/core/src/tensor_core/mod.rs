//! Dense tensors and a chain-structured computation graph with forward
//! inference, reverse-mode input gradients, and the modified-derivative
//! backward pass used for epsilon-LRP.

mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use gradcheck::{check_gradient, relative_error, GradCheck, DEFAULT_FD_STEP};
pub use graph::{infer_shapes, Graph, TapeState};
pub use layers::{DerivativeRule, LayerSpec};
pub use tensor::Tensor;
