//! Spatial pooling and nearest-neighbour upsampling.

use super::{as_std_slice, dims4};
use crate::graph::{Graph, NodeId};
use ndarray::{ArrayD, IxDyn};

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat index of the winning input element (for backward).
pub fn max_pool2_fwd(x: &ArrayD<f32>) -> (ArrayD<f32>, Vec<u32>) {
    let (n, c, h, w) = dims4(x);
    assert!(
        h % 2 == 0 && w % 2 == 0,
        "max_pool2 expects even spatial dims, got {h}x{w}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let xs = as_std_slice(x);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c, oh, ow]));
    let ys = y.as_slice_mut().unwrap();
    let mut arg = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let plane = &xs[p * h * w..][..h * w];
        let out = &mut ys[p * oh * ow..][..oh * ow];
        let idx = &mut arg[p * oh * ow..][..oh * ow];
        for oi in 0..oh {
            for oj in 0..ow {
                let base = (2 * oi) * w + 2 * oj;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &cd in &cand[1..] {
                    if plane[cd] > plane[best] {
                        best = cd;
                    }
                }
                out[oi * ow + oj] = plane[best];
                idx[oi * ow + oj] = (p * h * w + best) as u32;
            }
        }
    }
    (y, arg)
}

/// Graph op: 2x2/stride-2 max pooling.
pub fn max_pool2(g: &mut Graph, x: NodeId) -> NodeId {
    let xv = g.rc_value(x);
    let (y, arg) = max_pool2_fwd(&xv);
    let requires = g.requires_grad(x);
    let in_shape: Vec<usize> = xv.shape().to_vec();
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let mut gx = ArrayD::<f32>::zeros(IxDyn(&in_shape));
                let gxs = gx.as_slice_mut().unwrap();
                for (&i, &gv) in arg.iter().zip(as_std_slice(gy)) {
                    gxs[i as usize] += gv;
                }
                store.accumulate(x, gx);
            })
        }),
    )
}

/// Mean over the spatial dims: (n, c, h, w) -> (n, c).
pub fn global_avg_pool_fwd(x: &ArrayD<f32>) -> ArrayD<f32> {
    let (n, c, h, w) = dims4(x);
    let hw = (h * w) as f32;
    let xs = as_std_slice(x);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c]));
    let ys = y.as_slice_mut().unwrap();
    for p in 0..n * c {
        ys[p] = xs[p * (h * w)..][..h * w].iter().sum::<f32>() / hw;
    }
    y
}

/// Graph op: global average pooling.
pub fn global_avg_pool(g: &mut Graph, x: NodeId) -> NodeId {
    let xv = g.rc_value(x);
    let y = global_avg_pool_fwd(&xv);
    let requires = g.requires_grad(x);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let (n, c, h, w) = dims4(&xv);
                let hw = h * w;
                let gys = as_std_slice(gy);
                let mut gx = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
                let gxs = gx.as_slice_mut().unwrap();
                for p in 0..n * c {
                    let gv = gys[p] / hw as f32;
                    gxs[p * hw..][..hw].fill(gv);
                }
                store.accumulate(x, gx);
            })
        }),
    )
}

/// Nearest-neighbour 2x upsampling: (n, c, h, w) -> (n, c, 2h, 2w).
pub fn upsample_nearest2_fwd(x: &ArrayD<f32>) -> ArrayD<f32> {
    let (n, c, h, w) = dims4(x);
    let xs = as_std_slice(x);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c, 2 * h, 2 * w]));
    let ys = y.as_slice_mut().unwrap();
    for p in 0..n * c {
        let src = &xs[p * h * w..][..h * w];
        let dst = &mut ys[p * 4 * h * w..][..4 * h * w];
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j];
                let b = (2 * i) * (2 * w) + 2 * j;
                dst[b] = v;
                dst[b + 1] = v;
                dst[b + 2 * w] = v;
                dst[b + 2 * w + 1] = v;
            }
        }
    }
    y
}

/// Graph op: nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(g: &mut Graph, x: NodeId) -> NodeId {
    let xv = g.rc_value(x);
    let y = upsample_nearest2_fwd(&xv);
    let requires = g.requires_grad(x);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let (n, c, h, w) = dims4(&xv);
                let gys = as_std_slice(gy);
                let mut gx = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
                let gxs = gx.as_slice_mut().unwrap();
                for p in 0..n * c {
                    let src = &gys[p * 4 * h * w..][..4 * h * w];
                    let dst = &mut gxs[p * h * w..][..h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let b = (2 * i) * (2 * w) + 2 * j;
                            dst[i * w + j] = src[b] + src[b + 1] + src[b + 2 * w] + src[b + 2 * w + 1];
                        }
                    }
                }
                store.accumulate(x, gx);
            })
        }),
    )
}
