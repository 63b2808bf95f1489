//! Dual-stream 2D-to-3D human pose lifting.
//!
//! A pose clip of 2D keypoints with confidence scores is embedded into a
//! `batch x frames x joints x channels` feature grid and refined by stacked
//! dual-stream blocks: a local stream of spatial/temporal SSRFormers built on
//! skeleton selective refine attention (cascaded 1D depth-wise convolutions
//! acting as a large-kernel attention map) and a global stream of STFormers
//! built on criss-cross multi-head self-attention. The streams are fused
//! per position by a learned softmax gate, and a tanh motion-representation
//! layer feeds the 3D regression head.
//!
//! Everything is self-contained: the tensor engine with reverse-mode
//! differentiation, the convolution/attention blocks, AdamW training,
//! Procrustes-based evaluation metrics, a synthetic motion generator, and
//! verification oracles (finite differences, kernel-composition equivalence,
//! metric invariances) all live in this crate. See the `book/` guide at the
//! repository root for a chaptered walkthrough; its code snippets compile
//! and run as doc-tests of this crate.

pub mod cli;
pub mod conv;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod ssrformer;
pub mod stformer;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    //! Runs every code snippet in the mdbook guide as a doc-test.
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors-and-gradients.md")]
    mod tensors_and_gradients {}
    #[doc = include_str!("../../../book/src/kernel-decomposition.md")]
    mod kernel_decomposition {}
    #[doc = include_str!("../../../book/src/local-stream.md")]
    mod local_stream {}
    #[doc = include_str!("../../../book/src/global-stream.md")]
    mod global_stream {}
    #[doc = include_str!("../../../book/src/model-and-losses.md")]
    mod model_and_losses {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/data-and-training.md")]
    mod data_and_training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli_reference {}
}
