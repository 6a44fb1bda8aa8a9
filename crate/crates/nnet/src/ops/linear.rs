//! Fully connected layer: y = x @ w^T + b.

use super::{as_std_slice, dims2};
use crate::graph::{Graph, NodeId};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD};

fn view2(a: &ArrayD<f32>) -> ndarray::ArrayView2<'_, f32> {
    let (r, c) = dims2(a);
    a.view().into_shape_with_order((r, c)).unwrap()
}

/// Forward. `x`: (n, in), `w`: (out, in), `b`: (out).
pub fn linear_fwd(x: &ArrayD<f32>, w: &ArrayD<f32>, b: Option<&ArrayD<f32>>) -> ArrayD<f32> {
    let (n, xin) = dims2(x);
    let (out, win) = dims2(w);
    assert_eq!(xin, win, "linear shape mismatch: x has {xin}, w has {win}");
    let mut y = Array2::<f32>::zeros((n, out));
    general_mat_mul(1.0, &view2(x), &view2(w).t(), 0.0, &mut y);
    if let Some(b) = b {
        let bs = as_std_slice(b);
        for mut row in y.rows_mut() {
            let rs = row.as_slice_mut().unwrap();
            for (v, &bv) in rs.iter_mut().zip(bs) {
                *v += bv;
            }
        }
    }
    y.into_dyn()
}

/// Graph op: fully connected layer with optional bias.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
    let xv = g.rc_value(x);
    let wv = g.rc_value(w);
    let bv = b.map(|b| g.rc_value(b));
    let y = linear_fwd(&xv, &wv, bv.as_deref());
    let requires =
        g.requires_grad(x) || g.requires_grad(w) || b.map(|b| g.requires_grad(b)).unwrap_or(false);
    g.push(
        y,
        requires,
        requires.then(|| -> crate::graph::BackwardFn {
            Box::new(move |gy, store| {
                let gy2 = view2(gy);
                if store.needs(x) {
                    let mut gx = Array2::<f32>::zeros((xv.shape()[0], xv.shape()[1]));
                    general_mat_mul(1.0, &gy2, &view2(&wv), 0.0, &mut gx);
                    store.accumulate(x, gx.into_dyn());
                }
                if store.needs(w) {
                    let mut gw = Array2::<f32>::zeros((wv.shape()[0], wv.shape()[1]));
                    general_mat_mul(1.0, &gy2.t(), &view2(&xv), 0.0, &mut gw);
                    store.accumulate(w, gw.into_dyn());
                }
                if let Some(b) = b {
                    if store.needs(b) {
                        let gb = gy2.sum_axis(ndarray::Axis(0));
                        store.accumulate(b, gb.into_dyn());
                    }
                }
            })
        }),
    )
}
