pub mod conditioning;
pub mod curation;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
