//! Optimizers with checkpointable state, plus the backward/step glue.

use crate::graph::{Graph, NodeId};
use crate::layers::Module;
use ndarray::ArrayD;
use std::collections::BTreeMap;

/// Run backward from `root` and move the resulting gradients into the
/// parameters of `model` (accumulating if a parameter already has one).
/// Parameters of other (frozen) networks on the same tape are ignored.
pub fn backward_into(g: Graph, root: NodeId, model: &mut dyn Module) {
    let mut ids: Vec<Option<NodeId>> = Vec::new();
    model.visit_params(&mut |_, p| ids.push(g.leaf_id(p)));
    let mut store = g.backward(root);
    let mut i = 0;
    model.visit_params_mut(&mut |name, p| {
        if let Some(Some(id)) = ids.get(i) {
            if let Some(gr) = store.take(*id) {
                assert_eq!(
                    gr.shape(),
                    p.shape(),
                    "gradient/parameter shape mismatch for {name}"
                );
                match &mut p.grad {
                    Some(acc) => *acc += &gr,
                    slot @ None => *slot = Some(gr),
                }
            }
        }
        i += 1;
    });
}

/// Drop any pending gradients.
pub fn zero_grads(model: &mut dyn Module) {
    model.visit_params_mut(&mut |_, p| p.grad = None);
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: ArrayD<f32>,
    v: ArrayD<f32>,
}

/// Adam with bias correction (the standard formulation).
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    state: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Apply one update using (and consuming) each parameter's gradient.
    pub fn step(&mut self, model: &mut dyn Module) {
        self.t += 1;
        let (b1, b2, eps, lr, t) = (self.beta1, self.beta2, self.eps, self.lr, self.t);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let state = &mut self.state;
        model.visit_params_mut(&mut |name, p| {
            let Some(gr) = p.grad.take() else { return };
            let slot = state.entry(name.to_string()).or_insert_with(|| AdamSlot {
                m: ArrayD::zeros(gr.raw_dim()),
                v: ArrayD::zeros(gr.raw_dim()),
            });
            let val = p.value_mut().as_slice_mut().unwrap();
            let ms = slot.m.as_slice_mut().unwrap();
            let vs = slot.v.as_slice_mut().unwrap();
            let gs = gr.as_slice().unwrap();
            for i in 0..val.len() {
                ms[i] = b1 * ms[i] + (1.0 - b1) * gs[i];
                vs[i] = b2 * vs[i] + (1.0 - b2) * gs[i] * gs[i];
                let mhat = ms[i] / c1;
                let vhat = vs[i] / c2;
                val[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }

    /// Serializable state: per-parameter first/second moments plus the step
    /// counter. Needed so a resumed run continues the same trajectory.
    pub fn state_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = vec![(
            "t".to_string(),
            ArrayD::from_elem(ndarray::IxDyn(&[1]), self.t as f32),
        )];
        for (name, slot) in &self.state {
            out.push((format!("{name}.m"), slot.m.clone()));
            out.push((format!("{name}.v"), slot.v.clone()));
        }
        out
    }

    pub fn load_state_tensors(&mut self, tensors: Vec<(String, ArrayD<f32>)>) {
        self.state.clear();
        let mut halves: BTreeMap<String, (Option<ArrayD<f32>>, Option<ArrayD<f32>>)> =
            BTreeMap::new();
        for (name, arr) in tensors {
            if name == "t" {
                self.t = arr.iter().next().copied().unwrap_or(0.0) as u64;
            } else if let Some(base) = name.strip_suffix(".m") {
                halves.entry(base.to_string()).or_default().0 = Some(arr);
            } else if let Some(base) = name.strip_suffix(".v") {
                halves.entry(base.to_string()).or_default().1 = Some(arr);
            }
        }
        for (base, (m, v)) in halves {
            if let (Some(m), Some(v)) = (m, v) {
                self.state.insert(base, AdamSlot { m, v });
            }
        }
    }
}

/// SGD with optional classical momentum.
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: BTreeMap<String, ArrayD<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Module) {
        let (lr, mom) = (self.lr, self.momentum);
        let velocity = &mut self.velocity;
        model.visit_params_mut(&mut |name, p| {
            let Some(gr) = p.grad.take() else { return };
            let val = p.value_mut().as_slice_mut().unwrap();
            let gs = gr.as_slice().unwrap();
            if mom == 0.0 {
                for i in 0..val.len() {
                    val[i] -= lr * gs[i];
                }
            } else {
                let vel = velocity
                    .entry(name.to_string())
                    .or_insert_with(|| ArrayD::zeros(gr.raw_dim()));
                let vs = vel.as_slice_mut().unwrap();
                for i in 0..val.len() {
                    vs[i] = mom * vs[i] + gs[i];
                    val[i] -= lr * vs[i];
                }
            }
        });
    }

    pub fn state_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        self.velocity
            .iter()
            .map(|(n, v)| (format!("{n}.vel"), v.clone()))
            .collect()
    }

    pub fn load_state_tensors(&mut self, tensors: Vec<(String, ArrayD<f32>)>) {
        self.velocity = tensors
            .into_iter()
            .filter_map(|(n, v)| n.strip_suffix(".vel").map(|b| (b.to_string(), v)))
            .collect();
    }
}

/// Either optimizer behind one interface, so training code stays generic.
pub enum Optim {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optim {
    pub fn step(&mut self, model: &mut dyn Module) {
        match self {
            Optim::Adam(o) => o.step(model),
            Optim::Sgd(o) => o.step(model),
        }
    }

    pub fn lr(&self) -> f32 {
        match self {
            Optim::Adam(o) => o.lr,
            Optim::Sgd(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        match self {
            Optim::Adam(o) => o.lr = lr,
            Optim::Sgd(o) => o.lr = lr,
        }
    }

    pub fn state_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        match self {
            Optim::Adam(o) => o.state_tensors(),
            Optim::Sgd(o) => o.state_tensors(),
        }
    }

    pub fn load_state_tensors(&mut self, tensors: Vec<(String, ArrayD<f32>)>) {
        match self {
            Optim::Adam(o) => o.load_state_tensors(tensors),
            Optim::Sgd(o) => o.load_state_tensors(tensors),
        }
    }
}
