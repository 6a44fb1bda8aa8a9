//! Shape manipulation and simple arithmetic ops.

use crate::graph::{Graph, NodeId};
use ndarray::IxDyn;

use super::scalar;

/// Graph op: reshape to `shape` (element count must match).
pub fn reshape(g: &mut Graph, x: NodeId, shape: &[usize]) -> NodeId {
    let xv = g.rc_value(x);
    let old_shape: Vec<usize> = xv.shape().to_vec();
    let y = xv
        .view()
        .into_shape_with_order(IxDyn(shape))
        .unwrap_or_else(|_| panic!("cannot reshape {:?} to {:?}", xv.shape(), shape))
        .to_owned();
    let requires = g.requires_grad(x);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if !store.needs(x) {
                    return;
                }
                let gx = gy
                    .view()
                    .into_shape_with_order(IxDyn(&old_shape))
                    .unwrap()
                    .to_owned();
                store.accumulate(x, gx);
            })
        }),
    )
}

/// Graph op: elementwise sum of two same-shaped tensors.
pub fn add(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let av = g.rc_value(a);
    let bv = g.rc_value(b);
    assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
    let y = &*av + &*bv;
    let requires = g.requires_grad(a) || g.requires_grad(b);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if store.needs(a) {
                    store.accumulate(a, gy.clone());
                }
                if store.needs(b) {
                    store.accumulate(b, gy.clone());
                }
            })
        }),
    )
}

/// Graph op: multiply by a constant.
pub fn scale(g: &mut Graph, x: NodeId, k: f32) -> NodeId {
    let xv = g.rc_value(x);
    let y = xv.mapv(|v| v * k);
    let requires = g.requires_grad(x);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                if store.needs(x) {
                    store.accumulate(x, gy.mapv(|v| v * k));
                }
            })
        }),
    )
}

/// Graph op: weighted sum of scalar nodes, accumulated in f64. Used to
/// compose multi-term objectives without drift from repeated f32 rounding.
pub fn weighted_sum(g: &mut Graph, terms: &[(NodeId, f64)]) -> NodeId {
    let mut acc = 0.0f64;
    let mut requires = false;
    for &(id, wgt) in terms {
        let v = g.value(id);
        assert_eq!(v.len(), 1, "weighted_sum expects scalar terms");
        acc += wgt * v.iter().next().copied().unwrap() as f64;
        requires |= g.requires_grad(id);
    }
    let terms: Vec<(NodeId, f64)> = terms.to_vec();
    g.push(
        scalar(acc as f32),
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                let gv = gy.iter().next().copied().unwrap();
                for &(id, wgt) in &terms {
                    if store.needs(id) {
                        store.accumulate(id, scalar(gv * wgt as f32));
                    }
                }
            })
        }),
    )
}
