//! Seeded weight initializers. All of them fill in logical index order from
//! the provided RNG, so a given seed always produces the same tensors.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// U(-bound, bound).
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f32) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// N(mean, std).
pub fn normal<R: Rng>(rng: &mut R, shape: &[usize], mean: f32, std: f32) -> ArrayD<f32> {
    let dist = Normal::new(mean, std).expect("std must be finite and positive");
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Kaiming-style fan-in uniform: U(+-1/sqrt(fan_in)). The default for
/// convolution and linear weights and their biases.
pub fn fan_in_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
    uniform(rng, shape, 1.0 / (fan_in as f32).sqrt())
}

/// Weight + bias pair for a convolution (oc, ic, kh, kw).
pub fn conv_pair<R: Rng>(
    rng: &mut R,
    oc: usize,
    ic: usize,
    kh: usize,
    kw: usize,
) -> (ArrayD<f32>, ArrayD<f32>) {
    let fan_in = ic * kh * kw;
    (
        fan_in_uniform(rng, &[oc, ic, kh, kw], fan_in),
        fan_in_uniform(rng, &[oc], fan_in),
    )
}

/// Weight + bias pair for a linear layer (out, in).
pub fn linear_pair<R: Rng>(rng: &mut R, out: usize, inp: usize) -> (ArrayD<f32>, ArrayD<f32>) {
    (
        fan_in_uniform(rng, &[out, inp], inp),
        fan_in_uniform(rng, &[out], inp),
    )
}
