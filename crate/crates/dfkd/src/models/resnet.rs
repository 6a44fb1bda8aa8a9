//! Residual classifiers for 32x32 inputs (3x3 stem, no initial pooling).

use super::{ArchParams, Network};
use ndarray::ArrayD;
use nnet::{init, layers, ops, Graph, Mode, Module, NodeId, Param};
use rand_chacha::ChaCha8Rng;

struct ConvBn {
    conv: layers::Conv2d,
    bn: layers::BatchNorm2d,
}

impl ConvBn {
    fn new(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, stride: usize, pad: usize) -> Self {
        let (w, _) = init::conv_pair(rng, oc, ic, k, k);
        Self {
            conv: layers::Conv2d {
                w: Param::new(w),
                b: None, // the following norm layer supplies the shift
                stride,
                pad,
            },
            bn: layers::BatchNorm2d::new(oc),
        }
    }

    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let x = self.conv.forward(g, x, mode);
        self.bn.forward(g, x, mode)
    }

    fn forward_eval(&self, x: &ArrayD<f32>, batch_stats: bool) -> ArrayD<f32> {
        self.bn.forward_eval(&self.conv.forward_eval(x), batch_stats)
    }
}

impl Module for ConvBn {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("conv", &self.conv, f);
        layers::visit_child("bn", &self.bn, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("conv", &mut self.conv, f);
        layers::visit_child_mut("bn", &mut self.bn, f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        layers::visit_child_buffers("bn", &self.bn, f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        layers::visit_child_buffers_mut("bn", &mut self.bn, f);
    }
}

struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
    down: Option<ConvBn>,
}

impl BasicBlock {
    fn new(rng: &mut ChaCha8Rng, ic: usize, oc: usize, stride: usize) -> Self {
        Self {
            a: ConvBn::new(rng, ic, oc, 3, stride, 1),
            b: ConvBn::new(rng, oc, oc, 3, 1, 1),
            down: (stride != 1 || ic != oc).then(|| ConvBn::new(rng, ic, oc, 1, stride, 0)),
        }
    }

    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let y = self.a.forward(g, x, mode);
        let y = ops::relu(g, y);
        let y = self.b.forward(g, y, mode);
        let skip = match &mut self.down {
            Some(d) => d.forward(g, x, mode),
            None => x,
        };
        let y = ops::add(g, y, skip);
        ops::relu(g, y)
    }

    fn forward_eval(&self, x: &ArrayD<f32>, bs: bool) -> ArrayD<f32> {
        let y = self.a.forward_eval(x, bs).mapv(|v| v.max(0.0));
        let mut y = self.b.forward_eval(&y, bs);
        match &self.down {
            Some(d) => y += &d.forward_eval(x, bs),
            None => y += x,
        }
        y.mapv(|v| v.max(0.0))
    }
}

impl Module for BasicBlock {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("a", &self.a, f);
        layers::visit_child("b", &self.b, f);
        if let Some(d) = &self.down {
            layers::visit_child("down", d, f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("a", &mut self.a, f);
        layers::visit_child_mut("b", &mut self.b, f);
        if let Some(d) = &mut self.down {
            layers::visit_child_mut("down", d, f);
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        layers::visit_child_buffers("a", &self.a, f);
        layers::visit_child_buffers("b", &self.b, f);
        if let Some(d) = &self.down {
            layers::visit_child_buffers("down", d, f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        layers::visit_child_buffers_mut("a", &mut self.a, f);
        layers::visit_child_buffers_mut("b", &mut self.b, f);
        if let Some(d) = &mut self.down {
            layers::visit_child_buffers_mut("down", d, f);
        }
    }
}

/// Stage widths 64/128/256/512 at strides 1/2/2/2; depth per stage selects
/// the 18- or 34-layer variant.  The feature tap is the pooled 512-vector.
pub struct ResNet {
    stem: ConvBn,
    blocks: Vec<BasicBlock>,
    fc: layers::Linear,
}

impl ResNet {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams, depths: &[usize; 4]) -> Self {
        let stem = ConvBn::new(rng, p.in_channels, 64, 3, 1, 1);
        let mut blocks = Vec::new();
        let mut ic = 64;
        for (stage, (&oc, &depth)) in [64usize, 128, 256, 512].iter().zip(depths).enumerate() {
            for b in 0..depth {
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(rng, ic, oc, stride));
                ic = oc;
            }
        }
        let (w, b) = init::linear_pair(rng, p.num_classes, 512);
        let fc = layers::Linear {
            w: Param::new(w),
            b: Some(Param::new(b)),
        };
        Self { stem, blocks, fc }
    }
}

impl Module for ResNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("stem", &self.stem, f);
        for (i, b) in self.blocks.iter().enumerate() {
            layers::visit_child(&format!("block{i}"), b, f);
        }
        layers::visit_child("fc", &self.fc, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("stem", &mut self.stem, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            layers::visit_child_mut(&format!("block{i}"), b, f);
        }
        layers::visit_child_mut("fc", &mut self.fc, f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        layers::visit_child_buffers("stem", &self.stem, f);
        for (i, b) in self.blocks.iter().enumerate() {
            layers::visit_child_buffers(&format!("block{i}"), b, f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        layers::visit_child_buffers_mut("stem", &mut self.stem, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            layers::visit_child_buffers_mut(&format!("block{i}"), b, f);
        }
    }
}

impl Network for ResNet {
    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let x = self.stem.forward(g, x, mode);
        let mut x = ops::relu(g, x);
        for b in &mut self.blocks {
            x = b.forward(g, x, mode);
        }
        let feat = ops::global_avg_pool(g, x);
        let logits = self.fc.forward(g, feat, mode);
        (logits, vec![feat])
    }

    fn forward_eval(&self, x: &ArrayD<f32>, bs: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let mut x = self.stem.forward_eval(x, bs).mapv(|v| v.max(0.0));
        for b in &self.blocks {
            x = b.forward_eval(&x, bs);
        }
        let feat = ops::global_avg_pool_fwd(&x);
        let logits = self.fc.forward_eval(&feat);
        (logits, vec![feat])
    }

    fn tap_ids(&self) -> Vec<String> {
        vec!["pool.features".into()]
    }
}
