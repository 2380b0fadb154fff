pub mod attribution;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod model_space;
pub mod probe;
pub mod resize;
pub mod svcca;
pub mod synthetic;
pub mod tensor_core;

pub use error::{Error, Result};
