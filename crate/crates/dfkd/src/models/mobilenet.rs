//! MobileNetV2 adapted to 32x32 inputs: stride-1 stem and first two stages so
//! the resolution only drops to 4x4 before pooling.

use super::{ArchParams, Network};
use ndarray::ArrayD;
use nnet::{init, layers, ops, Graph, Mode, Module, NodeId, Param};
use rand_chacha::ChaCha8Rng;

/// (expansion, output channels, repeats, first stride)
const STAGES: &[(usize, usize, usize, usize)] = &[
    (1, 16, 1, 1),
    (6, 24, 2, 1),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

fn conv_bn(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, stride: usize, pad: usize)
    -> (layers::Conv2d, layers::BatchNorm2d) {
    let (w, _) = init::conv_pair(rng, oc, ic, k, k);
    (
        layers::Conv2d { w: Param::new(w), b: None, stride, pad },
        layers::BatchNorm2d::new(oc),
    )
}

struct InvertedResidual {
    expand: Option<(layers::Conv2d, layers::BatchNorm2d)>,
    dw: layers::DepthwiseConv2d,
    dw_bn: layers::BatchNorm2d,
    project: (layers::Conv2d, layers::BatchNorm2d),
    residual: bool,
}

impl InvertedResidual {
    fn new(rng: &mut ChaCha8Rng, ic: usize, oc: usize, t: usize, stride: usize) -> Self {
        let hidden = ic * t;
        let expand = (t != 1).then(|| conv_bn(rng, ic, hidden, 1, 1, 0));
        let dw_w = init::fan_in_uniform(rng, &[hidden, 1, 3, 3], 9);
        Self {
            expand,
            dw: layers::DepthwiseConv2d {
                w: Param::new(dw_w),
                b: None,
                stride,
                pad: 1,
            },
            dw_bn: layers::BatchNorm2d::new(hidden),
            project: conv_bn(rng, hidden, oc, 1, 1, 0),
            residual: stride == 1 && ic == oc,
        }
    }

    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let mut y = x;
        if let Some((c, bn)) = &mut self.expand {
            y = c.forward(g, y, mode);
            y = bn.forward(g, y, mode);
            y = ops::relu6(g, y);
        }
        y = self.dw.forward(g, y, mode);
        y = self.dw_bn.forward(g, y, mode);
        y = ops::relu6(g, y);
        y = self.project.0.forward(g, y, mode);
        y = self.project.1.forward(g, y, mode);
        if self.residual {
            y = ops::add(g, y, x);
        }
        y
    }

    fn forward_eval(&self, x: &ArrayD<f32>, bs: bool) -> ArrayD<f32> {
        let relu6 = |a: ArrayD<f32>| a.mapv(|v| v.clamp(0.0, 6.0));
        let mut y = x.clone();
        if let Some((c, bn)) = &self.expand {
            y = relu6(bn.forward_eval(&c.forward_eval(&y), bs));
        }
        y = relu6(self.dw_bn.forward_eval(&self.dw.forward_eval(&y), bs));
        y = self.project.1.forward_eval(&self.project.0.forward_eval(&y), bs);
        if self.residual {
            y += x;
        }
        y
    }
}

impl Module for InvertedResidual {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        if let Some((c, bn)) = &self.expand {
            layers::visit_child("expand.conv", c, f);
            layers::visit_child("expand.bn", bn, f);
        }
        layers::visit_child("dw", &self.dw, f);
        layers::visit_child("dw_bn", &self.dw_bn, f);
        layers::visit_child("project.conv", &self.project.0, f);
        layers::visit_child("project.bn", &self.project.1, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some((c, bn)) = &mut self.expand {
            layers::visit_child_mut("expand.conv", c, f);
            layers::visit_child_mut("expand.bn", bn, f);
        }
        layers::visit_child_mut("dw", &mut self.dw, f);
        layers::visit_child_mut("dw_bn", &mut self.dw_bn, f);
        layers::visit_child_mut("project.conv", &mut self.project.0, f);
        layers::visit_child_mut("project.bn", &mut self.project.1, f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        if let Some((_, bn)) = &self.expand {
            layers::visit_child_buffers("expand.bn", bn, f);
        }
        layers::visit_child_buffers("dw_bn", &self.dw_bn, f);
        layers::visit_child_buffers("project.bn", &self.project.1, f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        if let Some((_, bn)) = &mut self.expand {
            layers::visit_child_buffers_mut("expand.bn", bn, f);
        }
        layers::visit_child_buffers_mut("dw_bn", &mut self.dw_bn, f);
        layers::visit_child_buffers_mut("project.bn", &mut self.project.1, f);
    }
}

/// Inverted-residual classifier; the feature tap is the pooled 1280-vector.
pub struct MobileNetV2 {
    stem: (layers::Conv2d, layers::BatchNorm2d),
    blocks: Vec<InvertedResidual>,
    head: (layers::Conv2d, layers::BatchNorm2d),
    fc: layers::Linear,
}

impl MobileNetV2 {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams) -> Self {
        let stem = conv_bn(rng, p.in_channels, 32, 3, 1, 1);
        let mut blocks = Vec::new();
        let mut ic = 32;
        for &(t, c, n, s) in STAGES {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                blocks.push(InvertedResidual::new(rng, ic, c, t, stride));
                ic = c;
            }
        }
        let head = conv_bn(rng, ic, 1280, 1, 1, 0);
        let (w, b) = init::linear_pair(rng, p.num_classes, 1280);
        let fc = layers::Linear {
            w: Param::new(w),
            b: Some(Param::new(b)),
        };
        Self { stem, blocks, head, fc }
    }
}

impl Module for MobileNetV2 {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("stem.conv", &self.stem.0, f);
        layers::visit_child("stem.bn", &self.stem.1, f);
        for (i, b) in self.blocks.iter().enumerate() {
            layers::visit_child(&format!("block{i}"), b, f);
        }
        layers::visit_child("head.conv", &self.head.0, f);
        layers::visit_child("head.bn", &self.head.1, f);
        layers::visit_child("fc", &self.fc, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("stem.conv", &mut self.stem.0, f);
        layers::visit_child_mut("stem.bn", &mut self.stem.1, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            layers::visit_child_mut(&format!("block{i}"), b, f);
        }
        layers::visit_child_mut("head.conv", &mut self.head.0, f);
        layers::visit_child_mut("head.bn", &mut self.head.1, f);
        layers::visit_child_mut("fc", &mut self.fc, f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        layers::visit_child_buffers("stem.bn", &self.stem.1, f);
        for (i, b) in self.blocks.iter().enumerate() {
            layers::visit_child_buffers(&format!("block{i}"), b, f);
        }
        layers::visit_child_buffers("head.bn", &self.head.1, f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        layers::visit_child_buffers_mut("stem.bn", &mut self.stem.1, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            layers::visit_child_buffers_mut(&format!("block{i}"), b, f);
        }
        layers::visit_child_buffers_mut("head.bn", &mut self.head.1, f);
    }
}

impl Network for MobileNetV2 {
    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let x = self.stem.0.forward(g, x, mode);
        let x = self.stem.1.forward(g, x, mode);
        let mut x = ops::relu6(g, x);
        for b in &mut self.blocks {
            x = b.forward(g, x, mode);
        }
        let x = self.head.0.forward(g, x, mode);
        let x = self.head.1.forward(g, x, mode);
        let x = ops::relu6(g, x);
        let feat = ops::global_avg_pool(g, x);
        let logits = self.fc.forward(g, feat, mode);
        (logits, vec![feat])
    }

    fn forward_eval(&self, x: &ArrayD<f32>, bs: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let relu6 = |a: ArrayD<f32>| a.mapv(|v| v.clamp(0.0, 6.0));
        let mut x = relu6(self.stem.1.forward_eval(&self.stem.0.forward_eval(x), bs));
        for b in &self.blocks {
            x = b.forward_eval(&x, bs);
        }
        let x = relu6(self.head.1.forward_eval(&self.head.0.forward_eval(&x), bs));
        let feat = ops::global_avg_pool_fwd(&x);
        let logits = self.fc.forward_eval(&feat);
        (logits, vec![feat])
    }

    fn tap_ids(&self) -> Vec<String> {
        vec!["pool.features".into()]
    }
}
