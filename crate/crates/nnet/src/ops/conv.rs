//! 2-d convolution via im2col + GEMM, processed in fixed-size sample chunks so
//! the GEMM operands are large enough to hit the fast matrixmultiply kernels
//! while the scratch column buffer stays bounded.

use super::{as_std_slice, dims4};
use crate::graph::{Graph, NodeId};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, IxDyn};

/// Samples folded into one im2col GEMM. Fixed (not tuned per shape) so runs
/// are reproducible regardless of batch size.
const CHUNK: usize = 16;

fn out_dim(inp: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        inp + 2 * pad >= k,
        "kernel {k} larger than padded input {inp}+2*{pad}"
    );
    (inp + 2 * pad - k) / stride + 1
}

/// Write the im2col expansion of one sample into `col` columns
/// `[col_off, col_off + oh*ow)`. `col` has one row per (channel, ki, kj).
#[allow(clippy::too_many_arguments)]
fn im2col_sample(
    xs: &[f32], // one sample, len c*h*w
    col: &mut Array2<f32>,
    col_off: usize,
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) {
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst_row = col.row_mut(row);
                let dst = dst_row.into_slice().expect("col buffer is contiguous");
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    let seg = &mut dst[col_off + oi * ow..col_off + (oi + 1) * ow];
                    if ii < 0 || ii >= h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[ii as usize * w..(ii as usize + 1) * w];
                    if stride == 1 {
                        // jj = oj + kj - pad: one contiguous run is valid.
                        let jj0 = kj as isize - pad as isize;
                        let lo = (-jj0).max(0) as usize; // first valid oj
                        let hi = ((w as isize - jj0).max(0) as usize).min(ow);
                        seg[..lo.min(ow)].fill(0.0);
                        if lo < hi {
                            seg[lo..hi]
                                .copy_from_slice(&src_row[(jj0 + lo as isize) as usize..][..hi - lo]);
                        }
                        seg[hi.max(lo.min(ow))..].fill(0.0);
                    } else {
                        for (oj, slot) in seg.iter_mut().enumerate() {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            *slot = if jj < 0 || jj >= w as isize {
                                0.0
                            } else {
                                src_row[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-accumulate the inverse of [`im2col_sample`]: fold column gradients
/// back onto the (padded) input positions they were read from.
#[allow(clippy::too_many_arguments)]
fn col2im_sample(
    gxs: &mut [f32],
    gcol: &Array2<f32>,
    col_off: usize,
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) {
    for ci in 0..c {
        let plane = &mut gxs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src_row = gcol.row(row);
                let src = src_row.to_slice().expect("col buffer is contiguous");
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let seg = &src[col_off + oi * ow..col_off + (oi + 1) * ow];
                    for (oj, &gv) in seg.iter().enumerate() {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            dst_row[jj as usize] += gv;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `x`: (n, c, h, w); `w`: (oc, c, kh, kw); `b`: (oc).
pub fn conv2d_fwd(
    x: &ArrayD<f32>,
    wt: &ArrayD<f32>,
    b: Option<&ArrayD<f32>>,
    stride: usize,
    pad: usize,
) -> ArrayD<f32> {
    let (n, c, h, w) = dims4(x);
    let (oc, ci, kh, kw) = dims4(wt);
    assert_eq!(c, ci, "conv2d channel mismatch: input {c}, weight {ci}");
    let (oh, ow) = (out_dim(h, kh, stride, pad), out_dim(w, kw, stride, pad));
    let (ckk, ohw) = (c * kh * kw, oh * ow);

    let xs = as_std_slice(x);
    let w2 = wt
        .view()
        .into_shape_with_order((oc, ckk))
        .expect("weights are standard layout");
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, oc, oh, ow]));
    let ys = y.as_slice_mut().unwrap();

    let mut col = Array2::<f32>::zeros((ckk, CHUNK * ohw));
    let mut out = Array2::<f32>::zeros((oc, CHUNK * ohw));
    for start in (0..n).step_by(CHUNK) {
        let m = CHUNK.min(n - start);
        for si in 0..m {
            let sample = &xs[(start + si) * c * h * w..(start + si + 1) * c * h * w];
            im2col_sample(
                sample,
                &mut col,
                si * ohw,
                (c, h, w),
                (kh, kw),
                stride,
                pad,
                (oh, ow),
            );
        }
        general_mat_mul(
            1.0,
            &w2,
            &col.slice(ndarray::s![.., ..m * ohw]),
            0.0,
            &mut out.slice_mut(ndarray::s![.., ..m * ohw]),
        );
        let outs = out.as_slice().unwrap();
        for si in 0..m {
            for o in 0..oc {
                let bias = b.map_or(0.0, |bv| bv[[o]]);
                let src = &outs[o * CHUNK * ohw + si * ohw..][..ohw];
                let dst = &mut ys[((start + si) * oc + o) * ohw..][..ohw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
    }
    y
}

/// Backward convolution. Any of the three gradients can be skipped.
pub fn conv2d_bwd(
    x: &ArrayD<f32>,
    wt: &ArrayD<f32>,
    gy: &ArrayD<f32>,
    stride: usize,
    pad: usize,
    need_gx: bool,
    need_gw: bool,
    need_gb: bool,
) -> (Option<ArrayD<f32>>, Option<ArrayD<f32>>, Option<ArrayD<f32>>) {
    let (n, c, h, w) = dims4(x);
    let (oc, _, kh, kw) = dims4(wt);
    let (oh, ow) = (out_dim(h, kh, stride, pad), out_dim(w, kw, stride, pad));
    let (ckk, ohw) = (c * kh * kw, oh * ow);
    assert_eq!(gy.shape(), &[n, oc, oh, ow]);

    let xs = as_std_slice(x);
    let gys = as_std_slice(gy);
    let w2 = wt
        .view()
        .into_shape_with_order((oc, ckk))
        .expect("weights are standard layout");

    let mut gb = need_gb.then(|| ArrayD::<f32>::zeros(IxDyn(&[oc])));
    if let Some(gb) = gb.as_mut() {
        let gbs = gb.as_slice_mut().unwrap();
        for s in 0..n {
            for o in 0..oc {
                gbs[o] += gys[(s * oc + o) * ohw..][..ohw].iter().sum::<f32>();
            }
        }
    }

    let mut gx = need_gx.then(|| ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w])));
    let mut gw2 = (need_gw).then(|| Array2::<f32>::zeros((oc, ckk)));
    if need_gx || need_gw {
        let mut col = Array2::<f32>::zeros((ckk, CHUNK * ohw));
        let mut gyb = Array2::<f32>::zeros((oc, CHUNK * ohw));
        let mut gcol = Array2::<f32>::zeros((ckk, CHUNK * ohw));
        for start in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - start);
            {
                // Gather this chunk's output gradients as (oc, m*ohw).
                let gybs = gyb.as_slice_mut().unwrap();
                for si in 0..m {
                    for o in 0..oc {
                        let src = &gys[((start + si) * oc + o) * ohw..][..ohw];
                        gybs[o * CHUNK * ohw + si * ohw..][..ohw].copy_from_slice(src);
                    }
                }
            }
            if need_gw {
                for si in 0..m {
                    let sample = &xs[(start + si) * c * h * w..(start + si + 1) * c * h * w];
                    im2col_sample(
                        sample,
                        &mut col,
                        si * ohw,
                        (c, h, w),
                        (kh, kw),
                        stride,
                        pad,
                        (oh, ow),
                    );
                }
                general_mat_mul(
                    1.0,
                    &gyb.slice(ndarray::s![.., ..m * ohw]),
                    &col.slice(ndarray::s![.., ..m * ohw]).t(),
                    1.0,
                    gw2.as_mut().unwrap(),
                );
            }
            if let Some(gx) = gx.as_mut() {
                general_mat_mul(
                    1.0,
                    &w2.t(),
                    &gyb.slice(ndarray::s![.., ..m * ohw]),
                    0.0,
                    &mut gcol.slice_mut(ndarray::s![.., ..m * ohw]),
                );
                let gxs = gx.as_slice_mut().unwrap();
                for si in 0..m {
                    let sample = &mut gxs[(start + si) * c * h * w..(start + si + 1) * c * h * w];
                    col2im_sample(
                        sample,
                        &gcol,
                        si * ohw,
                        (c, h, w),
                        (kh, kw),
                        stride,
                        pad,
                        (oh, ow),
                    );
                }
            }
        }
    }
    let gw = gw2.map(|g| {
        g.into_shape_with_order(IxDyn(&[oc, c, kh, kw]))
            .unwrap()
            .into_dyn()
    });
    (gx, gw, gb)
}

/// Graph op: convolution with optional bias.
pub fn conv2d(
    g: &mut Graph,
    x: NodeId,
    wt: NodeId,
    b: Option<NodeId>,
    stride: usize,
    pad: usize,
) -> NodeId {
    let xv = g.rc_value(x);
    let wv = g.rc_value(wt);
    let bv = b.map(|b| g.rc_value(b));
    let y = conv2d_fwd(&xv, &wv, bv.as_deref(), stride, pad);
    let requires = g.requires_grad(x)
        || g.requires_grad(wt)
        || b.map(|b| g.requires_grad(b)).unwrap_or(false);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                let (gx, gw, gb) = conv2d_bwd(
                    &xv,
                    &wv,
                    gy,
                    stride,
                    pad,
                    store.needs(x),
                    store.needs(wt),
                    b.map(|b| store.needs(b)).unwrap_or(false),
                );
                if let Some(gx) = gx {
                    store.accumulate(x, gx);
                }
                if let Some(gw) = gw {
                    store.accumulate(wt, gw);
                }
                if let (Some(gb), Some(b)) = (gb, b) {
                    store.accumulate(b, gb);
                }
            })
        }),
    )
}

/// Depthwise (per-channel) convolution forward. `w`: (c, 1, kh, kw).
/// Plain loops: only used by the mobile architecture, which is exercised in
/// short smoke runs rather than long training.
pub fn depthwise_conv2d_fwd(
    x: &ArrayD<f32>,
    wt: &ArrayD<f32>,
    b: Option<&ArrayD<f32>>,
    stride: usize,
    pad: usize,
) -> ArrayD<f32> {
    let (n, c, h, w) = dims4(x);
    let (wc, one, kh, kw) = dims4(wt);
    assert_eq!((wc, one), (c, 1), "depthwise weight must be (c, 1, kh, kw)");
    let (oh, ow) = (out_dim(h, kh, stride, pad), out_dim(w, kw, stride, pad));
    let xs = as_std_slice(x);
    let ws = as_std_slice(wt);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c, oh, ow]));
    let ys = y.as_slice_mut().unwrap();
    for s in 0..n {
        for ci in 0..c {
            let plane = &xs[(s * c + ci) * h * w..][..h * w];
            let ker = &ws[ci * kh * kw..][..kh * kw];
            let bias = b.map_or(0.0, |bv| bv[[ci]]);
            let out = &mut ys[(s * c + ci) * oh * ow..][..oh * ow];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bias;
                    for ki in 0..kh {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                acc += plane[ii as usize * w + jj as usize] * ker[ki * kw + kj];
                            }
                        }
                    }
                    out[oi * ow + oj] = acc;
                }
            }
        }
    }
    y
}

/// Graph op: depthwise convolution.
pub fn depthwise_conv2d(
    g: &mut Graph,
    x: NodeId,
    wt: NodeId,
    b: Option<NodeId>,
    stride: usize,
    pad: usize,
) -> NodeId {
    let xv = g.rc_value(x);
    let wv = g.rc_value(wt);
    let bv = b.map(|b| g.rc_value(b));
    let y = depthwise_conv2d_fwd(&xv, &wv, bv.as_deref(), stride, pad);
    let requires = g.requires_grad(x)
        || g.requires_grad(wt)
        || b.map(|b| g.requires_grad(b)).unwrap_or(false);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                let (n, c, h, w) = dims4(&xv);
                let (_, _, kh, kw) = dims4(&wv);
                let (oh, ow) = (out_dim(h, kh, stride, pad), out_dim(w, kw, stride, pad));
                let xs = as_std_slice(&xv);
                let ws = as_std_slice(&wv);
                let gys = as_std_slice(gy);
                let mut gx = store
                    .needs(x)
                    .then(|| ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w])));
                let mut gw = store
                    .needs(wt)
                    .then(|| ArrayD::<f32>::zeros(IxDyn(&[c, 1, kh, kw])));
                let mut gb = b
                    .map(|b| store.needs(b))
                    .unwrap_or(false)
                    .then(|| ArrayD::<f32>::zeros(IxDyn(&[c])));
                for s in 0..n {
                    for ci in 0..c {
                        let plane = &xs[(s * c + ci) * h * w..][..h * w];
                        let ker = &ws[ci * kh * kw..][..kh * kw];
                        let go = &gys[(s * c + ci) * oh * ow..][..oh * ow];
                        if let Some(gb) = gb.as_mut() {
                            gb[[ci]] += go.iter().sum::<f32>();
                        }
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let gv = go[oi * ow + oj];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ki in 0..kh {
                                    let ii = (oi * stride + ki) as isize - pad as isize;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for kj in 0..kw {
                                        let jj = (oj * stride + kj) as isize - pad as isize;
                                        if jj < 0 || jj >= w as isize {
                                            continue;
                                        }
                                        let xi = ii as usize * w + jj as usize;
                                        if let Some(gw) = gw.as_mut() {
                                            gw[[ci, 0, ki, kj]] += gv * plane[xi];
                                        }
                                        if let Some(gx) = gx.as_mut() {
                                            let gxs = gx.as_slice_mut().unwrap();
                                            gxs[(s * c + ci) * h * w + xi] +=
                                                gv * ker[ki * kw + kj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    store.accumulate(x, gx);
                }
                if let Some(gw) = gw {
                    store.accumulate(wt, gw);
                }
                if let (Some(gb), Some(b)) = (gb, b) {
                    store.accumulate(b, gb);
                }
            })
        }),
    )
}
