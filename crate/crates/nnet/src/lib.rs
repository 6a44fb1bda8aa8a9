//! A compact CPU neural-network toolkit: a dynamic autodiff tape over
//! `ndarray`, the layers needed for small vision models (conv, batchnorm,
//! pooling, linear), and checkpointable optimizers.
//!
//! Design notes:
//!
//! * One [`graph::Graph`] is built per training step and consumed by
//!   `backward`; parameters live outside the graph behind `Rc` storage.
//! * Convolutions run as im2col + GEMM over fixed 16-sample chunks, which is
//!   where virtually all compute time goes.
//! * Everything is single-threaded and seeded, so identical inputs produce
//!   bit-identical outputs — several tests and the replay-buffer resume
//!   guarantees rely on this.

pub mod graph;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tio;

pub use graph::{BackwardFn, GradStore, Graph, NodeId, Param};
pub use layers::{BatchNorm2d, Conv2d, DepthwiseConv2d, Linear, Mode, Module};
pub use optim::{backward_into, zero_grads, Adam, Optim, Sgd};
