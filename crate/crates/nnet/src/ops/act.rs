//! Elementwise activations and row-wise softmax.

use super::{as_std_slice, dims2};
use crate::graph::{Graph, NodeId};
use ndarray::{ArrayD, IxDyn};
use std::rc::Rc;

fn elementwise(
    g: &mut Graph,
    x: NodeId,
    fwd: impl Fn(f32) -> f32,
    // gradient factor as a function of (input, output)
    dfn: impl Fn(f32, f32) -> f32 + 'static,
) -> NodeId {
    let xv = g.rc_value(x);
    let y = xv.mapv(fwd);
    let requires = g.requires_grad(x);
    let yv = Rc::new(y);
    let out = Rc::clone(&yv);
    let id = g.push_shared(
        yv,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let xs = as_std_slice(&xv);
                let os = as_std_slice(&out);
                let gys = as_std_slice(gy);
                let mut gx = ArrayD::<f32>::zeros(IxDyn(xv.shape()));
                let gxs = gx.as_slice_mut().unwrap();
                for i in 0..gxs.len() {
                    gxs[i] = gys[i] * dfn(xs[i], os[i]);
                }
                store.accumulate(x, gx);
            })
        }),
    );
    id
}

/// Graph op: max(0, x).
pub fn relu(g: &mut Graph, x: NodeId) -> NodeId {
    elementwise(g, x, |v| v.max(0.0), |v, _| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Graph op: x for x > 0, slope*x otherwise.
pub fn leaky_relu(g: &mut Graph, x: NodeId, slope: f32) -> NodeId {
    elementwise(
        g,
        x,
        move |v| if v > 0.0 { v } else { slope * v },
        move |v, _| if v > 0.0 { 1.0 } else { slope },
    )
}

/// Graph op: min(max(0, x), 6).
pub fn relu6(g: &mut Graph, x: NodeId) -> NodeId {
    elementwise(
        g,
        x,
        |v| v.clamp(0.0, 6.0),
        |v, _| if v > 0.0 && v < 6.0 { 1.0 } else { 0.0 },
    )
}

/// Graph op: tanh(x).
pub fn tanh(g: &mut Graph, x: NodeId) -> NodeId {
    elementwise(g, x, |v| v.tanh(), |_, y| 1.0 - y * y)
}

/// Row-wise softmax over (n, classes), numerically stabilized.
pub fn softmax_fwd(logits: &ArrayD<f32>) -> ArrayD<f32> {
    let (n, c) = dims2(logits);
    let xs = as_std_slice(logits);
    let mut y = ArrayD::<f32>::zeros(IxDyn(&[n, c]));
    let ys = y.as_slice_mut().unwrap();
    for i in 0..n {
        let row = &xs[i * c..][..c];
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let out = &mut ys[i * c..][..c];
        let mut z = 0.0f32;
        for j in 0..c {
            let e = (row[j] - m).exp();
            out[j] = e;
            z += e;
        }
        for v in out.iter_mut() {
            *v /= z;
        }
    }
    y
}

/// Graph op: row-wise softmax. Backward: gx = p * (gy - sum(gy * p)).
pub fn softmax(g: &mut Graph, x: NodeId) -> NodeId {
    let xv = g.rc_value(x);
    let p = Rc::new(softmax_fwd(&xv));
    let pc = Rc::clone(&p);
    let requires = g.requires_grad(x);
    g.push_shared(
        p,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let (n, c) = dims2(&pc);
                let ps = as_std_slice(&pc);
                let gys = as_std_slice(gy);
                let mut gx = ArrayD::<f32>::zeros(IxDyn(&[n, c]));
                let gxs = gx.as_slice_mut().unwrap();
                for i in 0..n {
                    let pr = &ps[i * c..][..c];
                    let gr = &gys[i * c..][..c];
                    let dot: f32 = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gxs[i * c + j] = pr[j] * (gr[j] - dot);
                    }
                }
                store.accumulate(x, gx);
            })
        }),
    )
}
