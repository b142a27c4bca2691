pub mod boundary;
pub mod dataio;
pub mod experiment;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod verify;

pub use tensor::{no_grad, Padding, Tensor, TensorError};

// Compiles and runs the guide's listings as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/boundary.md")]
    mod boundary {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
