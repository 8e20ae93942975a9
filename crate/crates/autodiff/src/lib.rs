//! Minimal dense-tensor reverse-mode differentiation engine.
//!
//! A [`Graph`] is declared node by node (inputs, parameters, constants and
//! operations), evaluated with [`Graph::forward`], and differentiated with
//! [`Graph::backward`]. Parameters live outside the graph in a
//! [`ParamStore`] so the same store can be reused across many graphs; the
//! [`Adam`] optimizer updates the store from the gradients a backward pass
//! returns.
//!
//! Everything is generic over [`Real`] (`f32` for training, `f64` for
//! gradient checks).

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod init;
mod kernels;
mod ops;
mod real;
mod rng;
mod store;
pub mod suite;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckEntry, GradCheckReport};
pub use graph::{Gradients, Graph, Mode, NodeId};
pub use ops::{Activation, CustomOp, KeyMask, OpKind};
pub use real::{DType, Real};
pub use rng::counter_uniform;
pub use store::{ManifestEntry, ParamStore};
pub use tensor::Tensor;
