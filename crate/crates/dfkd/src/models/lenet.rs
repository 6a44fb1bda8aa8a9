//! LeNet-5 classifier and its half-width variant for 32x32 inputs.

use super::{ArchParams, Network};
use ndarray::ArrayD;
use nnet::{init, layers, ops, Graph, Mode, Module, NodeId, Param};
use rand_chacha::ChaCha8Rng;

/// conv(5x5) -> pool -> conv(5x5) -> pool -> conv(5x5) -> fc -> fc, with
/// ReLU after every learned layer except the output.  The feature tap is the
/// flattened third-convolution output.
pub struct LeNet5 {
    conv1: layers::Conv2d,
    conv2: layers::Conv2d,
    conv3: layers::Conv2d,
    fc1: layers::Linear,
    fc2: layers::Linear,
    c5: usize,
}

fn conv(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize) -> layers::Conv2d {
    let (w, b) = init::conv_pair(rng, oc, ic, k, k);
    layers::Conv2d {
        w: Param::new(w),
        b: Some(Param::new(b)),
        stride: 1,
        pad: 0,
    }
}

fn linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> layers::Linear {
    let (w, b) = init::linear_pair(rng, out, inp);
    layers::Linear {
        w: Param::new(w),
        b: Some(Param::new(b)),
    }
}

impl LeNet5 {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams, half: bool) -> Self {
        let (c1, c3, c5, f6) = if half { (3, 8, 60, 42) } else { (6, 16, 120, 84) };
        Self {
            conv1: conv(rng, p.in_channels, c1, 5),
            conv2: conv(rng, c1, c3, 5),
            conv3: conv(rng, c3, c5, 5),
            fc1: linear(rng, f6, c5),
            fc2: linear(rng, p.num_classes, f6),
            c5,
        }
    }
}

impl Module for LeNet5 {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("conv1", &self.conv1, f);
        layers::visit_child("conv2", &self.conv2, f);
        layers::visit_child("conv3", &self.conv3, f);
        layers::visit_child("fc1", &self.fc1, f);
        layers::visit_child("fc2", &self.fc2, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("conv1", &mut self.conv1, f);
        layers::visit_child_mut("conv2", &mut self.conv2, f);
        layers::visit_child_mut("conv3", &mut self.conv3, f);
        layers::visit_child_mut("fc1", &mut self.fc1, f);
        layers::visit_child_mut("fc2", &mut self.fc2, f);
    }
}

impl Network for LeNet5 {
    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let n = g.value(x).shape()[0];
        let x = self.conv1.forward(g, x, mode);
        let x = ops::relu(g, x);
        let x = ops::max_pool2(g, x);
        let x = self.conv2.forward(g, x, mode);
        let x = ops::relu(g, x);
        let x = ops::max_pool2(g, x);
        let x = self.conv3.forward(g, x, mode);
        let x = ops::relu(g, x);
        let feat = ops::reshape(g, x, &[n, self.c5]);
        let x = self.fc1.forward(g, feat, mode);
        let x = ops::relu(g, x);
        let logits = self.fc2.forward(g, x, mode);
        (logits, vec![feat])
    }

    fn forward_eval(&self, x: &ArrayD<f32>, _batch_stats: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let n = x.shape()[0];
        let relu = |a: ArrayD<f32>| a.mapv(|v| v.max(0.0));
        let x = relu(self.conv1.forward_eval(x));
        let (x, _) = ops::max_pool2_fwd(&x);
        let x = relu(self.conv2.forward_eval(&x));
        let (x, _) = ops::max_pool2_fwd(&x);
        let x = relu(self.conv3.forward_eval(&x));
        let feat = x.into_shape_with_order(vec![n, self.c5]).unwrap();
        let x = relu(self.fc1.forward_eval(&feat));
        let logits = self.fc2.forward_eval(&x);
        (logits, vec![feat])
    }

    fn tap_ids(&self) -> Vec<String> {
        vec!["conv3.features".into()]
    }
}
