//! Small dense networks for the 2-d visualization domain.

use super::{ArchParams, Network};
use ndarray::ArrayD;
use nnet::{init, layers, ops, Graph, Mode, Module, NodeId, Param};
use rand_chacha::ChaCha8Rng;

/// Scale applied to the toy generator's tanh output so synthetic points can
/// reach every cluster in the scene.
const OUTPUT_SCALE: f32 = 4.0;

fn linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> layers::Linear {
    let (w, b) = init::linear_pair(rng, out, inp);
    layers::Linear {
        w: Param::new(w),
        b: Some(Param::new(b)),
    }
}

/// Two-hidden-layer ReLU classifier on (n, 2) points; the feature tap is the
/// last hidden layer.
pub struct ToyMlp {
    fc1: layers::Linear,
    fc2: layers::Linear,
    fc3: layers::Linear,
}

impl ToyMlp {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams, width: usize) -> Self {
        Self {
            fc1: linear(rng, width, 2),
            fc2: linear(rng, width, width),
            fc3: linear(rng, p.num_classes, width),
        }
    }
}

impl Module for ToyMlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("fc1", &self.fc1, f);
        layers::visit_child("fc2", &self.fc2, f);
        layers::visit_child("fc3", &self.fc3, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("fc1", &mut self.fc1, f);
        layers::visit_child_mut("fc2", &mut self.fc2, f);
        layers::visit_child_mut("fc3", &mut self.fc3, f);
    }
}

impl Network for ToyMlp {
    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let x = self.fc1.forward(g, x, mode);
        let x = ops::relu(g, x);
        let x = self.fc2.forward(g, x, mode);
        let feat = ops::relu(g, x);
        let logits = self.fc3.forward(g, feat, mode);
        (logits, vec![feat])
    }

    fn forward_eval(&self, x: &ArrayD<f32>, _bs: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let relu = |a: ArrayD<f32>| a.mapv(|v| v.max(0.0));
        let x = relu(self.fc1.forward_eval(x));
        let feat = relu(self.fc2.forward_eval(&x));
        let logits = self.fc3.forward_eval(&feat);
        (logits, vec![feat])
    }

    fn tap_ids(&self) -> Vec<String> {
        vec!["fc2.features".into()]
    }
}

/// Latent vector to 2-d point, tanh-bounded and scaled to the scene extent.
pub struct ToyGenerator {
    fc1: layers::Linear,
    fc2: layers::Linear,
    fc3: layers::Linear,
}

impl ToyGenerator {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams) -> Self {
        Self {
            fc1: linear(rng, 64, p.latent_dim),
            fc2: linear(rng, 64, 64),
            fc3: linear(rng, 2, 64),
        }
    }
}

impl Module for ToyGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("fc1", &self.fc1, f);
        layers::visit_child("fc2", &self.fc2, f);
        layers::visit_child("fc3", &self.fc3, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("fc1", &mut self.fc1, f);
        layers::visit_child_mut("fc2", &mut self.fc2, f);
        layers::visit_child_mut("fc3", &mut self.fc3, f);
    }
}

impl Network for ToyGenerator {
    fn forward(&mut self, g: &mut Graph, z: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let x = self.fc1.forward(g, z, mode);
        let x = ops::relu(g, x);
        let x = self.fc2.forward(g, x, mode);
        let x = ops::relu(g, x);
        let x = self.fc3.forward(g, x, mode);
        let x = ops::tanh(g, x);
        (ops::scale(g, x, OUTPUT_SCALE), Vec::new())
    }

    fn forward_eval(&self, z: &ArrayD<f32>, _bs: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let relu = |a: ArrayD<f32>| a.mapv(|v| v.max(0.0));
        let x = relu(self.fc1.forward_eval(z));
        let x = relu(self.fc2.forward_eval(&x));
        let x = self.fc3.forward_eval(&x);
        (x.mapv(|v| v.tanh() * OUTPUT_SCALE), Vec::new())
    }

    fn tap_ids(&self) -> Vec<String> {
        Vec::new()
    }
}
