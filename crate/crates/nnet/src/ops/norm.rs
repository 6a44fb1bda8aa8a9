//! Batch normalization over (n, c, h, w), normalizing per channel.

use super::{as_std_slice, dims4};
use crate::graph::{Graph, NodeId};
use ndarray::{ArrayD, IxDyn};
use std::rc::Rc;

/// Per-channel statistics of the current batch, reported back to the layer so
/// it can fold them into its running buffers when training.
pub struct BnStats {
    pub mean: Vec<f32>,
    /// Unbiased (n-1 denominator) variance, the convention for running
    /// buffers; normalization itself uses the biased variance.
    pub var_unbiased: Vec<f32>,
}

fn channel_stats(xs: &[f32], n: usize, c: usize, hw: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * hw) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ci in 0..c {
        let mut acc = 0.0f64;
        for s in 0..n {
            let seg = &xs[(s * c + ci) * hw..][..hw];
            acc += seg.iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = acc / count;
        let mut vacc = 0.0f64;
        for s in 0..n {
            let seg = &xs[(s * c + ci) * hw..][..hw];
            vacc += seg.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
        }
        mean[ci] = mu as f32;
        var[ci] = (vacc / count) as f32;
    }
    (mean, var)
}

/// Normalize with the provided (running) statistics; used for inference.
pub fn batchnorm2d_eval_fwd(
    x: &ArrayD<f32>,
    gamma: &ArrayD<f32>,
    beta: &ArrayD<f32>,
    mean: &ArrayD<f32>,
    var: &ArrayD<f32>,
    eps: f32,
) -> ArrayD<f32> {
    let (n, c, h, w) = dims4(x);
    let hw = h * w;
    let xs = as_std_slice(x);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
    let ys = y.as_slice_mut().unwrap();
    for ci in 0..c {
        let inv = 1.0 / (var[[ci]] + eps).sqrt();
        let (a, b) = (gamma[[ci]] * inv, beta[[ci]] - gamma[[ci]] * inv * mean[[ci]]);
        for s in 0..n {
            let src = &xs[(s * c + ci) * hw..][..hw];
            let dst = &mut ys[(s * c + ci) * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = a * v + b;
            }
        }
    }
    y
}

/// Normalize with statistics computed from the batch itself. Returns the
/// output, the normalized activations (needed by backward), the inverse
/// standard deviation per channel, and the batch stats for buffer updates.
pub fn batchnorm2d_train_fwd(
    x: &ArrayD<f32>,
    gamma: &ArrayD<f32>,
    beta: &ArrayD<f32>,
    eps: f32,
) -> (ArrayD<f32>, ArrayD<f32>, Vec<f32>, BnStats) {
    let (n, c, h, w) = dims4(x);
    let hw = h * w;
    let xs = as_std_slice(x);
    let (mean, var) = channel_stats(xs, n, c, hw);
    let count = n * hw;
    assert!(count > 1, "batch-stats normalization needs more than one value per channel");
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
    let mut xhat = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
    let mut inv = vec![0.0f32; c];
    {
        let ys = y.as_slice_mut().unwrap();
        let xh = xhat.as_slice_mut().unwrap();
        for ci in 0..c {
            inv[ci] = 1.0 / (var[ci] + eps).sqrt();
            let (ga, be, mu, iv) = (gamma[[ci]], beta[[ci]], mean[ci], inv[ci]);
            for s in 0..n {
                let base = (s * c + ci) * hw;
                for k in 0..hw {
                    let h = (xs[base + k] - mu) * iv;
                    xh[base + k] = h;
                    ys[base + k] = ga * h + be;
                }
            }
        }
    }
    let scale = count as f32 / (count as f32 - 1.0);
    let var_unbiased = var.iter().map(|v| v * scale).collect();
    (
        y,
        xhat,
        inv,
        BnStats {
            mean,
            var_unbiased,
        },
    )
}

/// Graph op. With `use_batch_stats` the batch's own statistics normalize the
/// input (training / frozen-training behaviour) and are returned so the
/// caller can update running buffers; otherwise `running_*` are used.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running_mean: &ArrayD<f32>,
    running_var: &ArrayD<f32>,
    use_batch_stats: bool,
    eps: f32,
) -> (NodeId, Option<BnStats>) {
    let xv = g.rc_value(x);
    let gv = g.rc_value(gamma);
    let bv = g.rc_value(beta);
    let requires = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);

    if use_batch_stats {
        let (y, xhat, inv, stats) = batchnorm2d_train_fwd(&xv, &gv, &bv, eps);
        let xhat = Rc::new(xhat);
        let id = g.push(
            y,
            requires,
            requires.then(|| -> crate::graph::BackwardFn {
                Box::new(move |gy: &ArrayD<f32>, store: &mut crate::graph::GradStore| {
                    let (n, c, h, w) = dims4(&xhat);
                    let hw = h * w;
                    let count = (n * hw) as f32;
                    let gys = as_std_slice(gy);
                    let xh = as_std_slice(&xhat);
                    // Per-channel reductions shared by all three gradients.
                    let mut sum_gy = vec![0.0f32; c];
                    let mut sum_gy_xhat = vec![0.0f32; c];
                    for ci in 0..c {
                        let (mut a, mut b) = (0.0f64, 0.0f64);
                        for s in 0..n {
                            let base = (s * c + ci) * hw;
                            for k in 0..hw {
                                a += gys[base + k] as f64;
                                b += (gys[base + k] * xh[base + k]) as f64;
                            }
                        }
                        sum_gy[ci] = a as f32;
                        sum_gy_xhat[ci] = b as f32;
                    }
                    if store.needs(beta) {
                        store.accumulate(beta, ArrayD::from_shape_vec(IxDyn(&[c]), sum_gy.clone()).unwrap());
                    }
                    if store.needs(gamma) {
                        store.accumulate(
                            gamma,
                            ArrayD::from_shape_vec(IxDyn(&[c]), sum_gy_xhat.clone()).unwrap(),
                        );
                    }
                    if store.needs(x) {
                        let mut gx = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
                        let gxs = gx.as_slice_mut().unwrap();
                        for ci in 0..c {
                            // d xhat -> d x for batch statistics:
                            // gx = inv * (gxh - mean(gxh) - xhat * mean(gxh*xhat))
                            let ga = gv[[ci]];
                            let m1 = ga * sum_gy[ci] / count;
                            let m2 = ga * sum_gy_xhat[ci] / count;
                            let iv = inv[ci];
                            for s in 0..n {
                                let base = (s * c + ci) * hw;
                                for k in 0..hw {
                                    let gxh = ga * gys[base + k];
                                    gxs[base + k] = iv * (gxh - m1 - xh[base + k] * m2);
                                }
                            }
                        }
                        store.accumulate(x, gx);
                    }
                }) as crate::graph::BackwardFn
            }),
        );
        (id, Some(stats))
    } else {
        let y = batchnorm2d_eval_fwd(&xv, &gv, &bv, running_mean, running_var, eps);
        let (rm, rv) = (running_mean.clone(), running_var.clone());
        let id = g.push(
            y,
            requires,
            requires.then(|| -> crate::graph::BackwardFn {
                Box::new(move |gy: &ArrayD<f32>, store: &mut crate::graph::GradStore| {
                    let (n, c, h, w) = dims4(&xv);
                    let hw = h * w;
                    let gys = as_std_slice(gy);
                    let xs = as_std_slice(&xv);
                    if store.needs(x) {
                        let mut gx = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
                        let gxs = gx.as_slice_mut().unwrap();
                        for ci in 0..c {
                            let a = gv[[ci]] / (rv[[ci]] + eps).sqrt();
                            for s in 0..n {
                                let base = (s * c + ci) * hw;
                                for k in 0..hw {
                                    gxs[base + k] = a * gys[base + k];
                                }
                            }
                        }
                        store.accumulate(x, gx);
                    }
                    if store.needs(beta) {
                        let mut gb = vec![0.0f32; c];
                        for ci in 0..c {
                            for s in 0..n {
                                let base = (s * c + ci) * hw;
                                gb[ci] += gys[base..base + hw].iter().sum::<f32>();
                            }
                        }
                        store.accumulate(beta, ArrayD::from_shape_vec(IxDyn(&[c]), gb).unwrap());
                    }
                    if store.needs(gamma) {
                        let mut gg = vec![0.0f32; c];
                        for ci in 0..c {
                            let inv = 1.0 / (rv[[ci]] + eps).sqrt();
                            let mu = rm[[ci]];
                            for s in 0..n {
                                let base = (s * c + ci) * hw;
                                for k in 0..hw {
                                    gg[ci] += gys[base + k] * (xs[base + k] - mu) * inv;
                                }
                            }
                        }
                        store.accumulate(gamma, ArrayD::from_shape_vec(IxDyn(&[c]), gg).unwrap());
                    }
                }) as crate::graph::BackwardFn
            }),
        );
        (id, None)
    }
}
