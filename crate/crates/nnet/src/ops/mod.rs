//! Tensor ops: each op has a pure forward kernel (usable without a tape) and
//! a graph builder that pushes the op plus its backward closure.

pub mod act;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod shape;

pub use act::{leaky_relu, relu, relu6, softmax, softmax_fwd, tanh};
pub use conv::{conv2d, conv2d_fwd, depthwise_conv2d, depthwise_conv2d_fwd};
pub use linear::{linear, linear_fwd};
pub use norm::{batchnorm2d, batchnorm2d_eval_fwd, batchnorm2d_train_fwd, BnStats};
pub use pool::{
    global_avg_pool, global_avg_pool_fwd, max_pool2, max_pool2_fwd, upsample_nearest2,
    upsample_nearest2_fwd,
};
pub use shape::{add, reshape, scale, weighted_sum};

use ndarray::{ArrayD, IxDyn};

/// Wrap an f32 in the 0-dim array used for scalar nodes.
pub fn scalar(v: f32) -> ArrayD<f32> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

/// Extract the value of a scalar (single-element) array.
pub fn to_scalar(a: &ArrayD<f32>) -> f32 {
    debug_assert_eq!(a.len(), 1, "expected scalar, got shape {:?}", a.shape());
    a.iter().copied().next().unwrap()
}

pub(crate) fn dims4(a: &ArrayD<f32>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    assert_eq!(s.len(), 4, "expected 4-d tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub(crate) fn dims2(a: &ArrayD<f32>) -> (usize, usize) {
    let s = a.shape();
    assert_eq!(s.len(), 2, "expected 2-d tensor, got shape {s:?}");
    (s[0], s[1])
}

/// Contiguous standard-layout slice of a tensor. All tensors produced by this
/// crate are standard layout; this is the load-bearing assumption behind the
/// raw-slice kernels.
pub(crate) fn as_std_slice(a: &ArrayD<f32>) -> &[f32] {
    a.as_slice().expect("tensor must be standard (C) layout")
}
