//! DCGAN-style image generator: latent vector to tanh pixels via two
//! nearest-neighbour upsampling stages.

use super::{ArchParams, Network};
use crate::error::{Error, Result};
use ndarray::ArrayD;
use nnet::{init, layers, ops, Graph, Mode, Module, NodeId, Param};
use rand_chacha::ChaCha8Rng;

const LEAK: f32 = 0.2;

/// fc -> (ngf, h/4, w/4) -> bn -> [up2, conv3x3, bn, leaky] -> [up2, conv3x3
/// to ngf/2, bn, leaky] -> conv3x3 to channels -> tanh.  Weights start at
/// N(0, 0.02), norm gains at N(1, 0.02).
pub struct DcganGenerator {
    fc: layers::Linear,
    bn0: layers::BatchNorm2d,
    conv1: layers::Conv2d,
    bn1: layers::BatchNorm2d,
    conv2: layers::Conv2d,
    bn2: layers::BatchNorm2d,
    conv3: layers::Conv2d,
    ngf: usize,
    base_hw: (usize, usize),
}

fn gen_conv(rng: &mut ChaCha8Rng, ic: usize, oc: usize) -> layers::Conv2d {
    layers::Conv2d {
        w: Param::new(init::normal(rng, &[oc, ic, 3, 3], 0.0, 0.02)),
        b: Some(Param::new(ArrayD::zeros(ndarray::IxDyn(&[oc])))),
        stride: 1,
        pad: 1,
    }
}

fn gen_bn(rng: &mut ChaCha8Rng, c: usize) -> layers::BatchNorm2d {
    let mut bn = layers::BatchNorm2d::new(c);
    *bn.gamma.value_mut() = init::normal(rng, &[c], 1.0, 0.02);
    bn
}

impl DcganGenerator {
    pub fn new(rng: &mut ChaCha8Rng, p: &ArchParams) -> Result<Self> {
        let (h, w) = p.image_hw;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "generator output {h}x{w} must be divisible by 4 (two upsampling stages)"
            )));
        }
        let ngf = p.feature_maps;
        let base = (h / 4) * (w / 4);
        let fc = layers::Linear {
            w: Param::new(init::normal(rng, &[ngf * base, p.latent_dim], 0.0, 0.02)),
            b: Some(Param::new(ArrayD::zeros(ndarray::IxDyn(&[ngf * base])))),
        };
        Ok(Self {
            fc,
            bn0: gen_bn(rng, ngf),
            conv1: gen_conv(rng, ngf, ngf),
            bn1: gen_bn(rng, ngf),
            conv2: gen_conv(rng, ngf, ngf / 2),
            bn2: gen_bn(rng, ngf / 2),
            conv3: gen_conv(rng, ngf / 2, p.in_channels),
            ngf,
            base_hw: (h / 4, w / 4),
        })
    }
}

impl Module for DcganGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        layers::visit_child("fc", &self.fc, f);
        layers::visit_child("bn0", &self.bn0, f);
        layers::visit_child("conv1", &self.conv1, f);
        layers::visit_child("bn1", &self.bn1, f);
        layers::visit_child("conv2", &self.conv2, f);
        layers::visit_child("bn2", &self.bn2, f);
        layers::visit_child("conv3", &self.conv3, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        layers::visit_child_mut("fc", &mut self.fc, f);
        layers::visit_child_mut("bn0", &mut self.bn0, f);
        layers::visit_child_mut("conv1", &mut self.conv1, f);
        layers::visit_child_mut("bn1", &mut self.bn1, f);
        layers::visit_child_mut("conv2", &mut self.conv2, f);
        layers::visit_child_mut("bn2", &mut self.bn2, f);
        layers::visit_child_mut("conv3", &mut self.conv3, f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        layers::visit_child_buffers("bn0", &self.bn0, f);
        layers::visit_child_buffers("bn1", &self.bn1, f);
        layers::visit_child_buffers("bn2", &self.bn2, f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        layers::visit_child_buffers_mut("bn0", &mut self.bn0, f);
        layers::visit_child_buffers_mut("bn1", &mut self.bn1, f);
        layers::visit_child_buffers_mut("bn2", &mut self.bn2, f);
    }
}

impl Network for DcganGenerator {
    fn forward(&mut self, g: &mut Graph, z: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>) {
        let n = g.value(z).shape()[0];
        let (bh, bw) = self.base_hw;
        let x = self.fc.forward(g, z, mode);
        let x = ops::reshape(g, x, &[n, self.ngf, bh, bw]);
        let x = self.bn0.forward(g, x, mode);
        let x = ops::upsample_nearest2(g, x);
        let x = self.conv1.forward(g, x, mode);
        let x = self.bn1.forward(g, x, mode);
        let x = ops::leaky_relu(g, x, LEAK);
        let x = ops::upsample_nearest2(g, x);
        let x = self.conv2.forward(g, x, mode);
        let x = self.bn2.forward(g, x, mode);
        let x = ops::leaky_relu(g, x, LEAK);
        let x = self.conv3.forward(g, x, mode);
        (ops::tanh(g, x), Vec::new())
    }

    fn forward_eval(&self, z: &ArrayD<f32>, bs: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>) {
        let n = z.shape()[0];
        let (bh, bw) = self.base_hw;
        let leaky = |a: ArrayD<f32>| a.mapv(|v| if v >= 0.0 { v } else { LEAK * v });
        let x = self.fc.forward_eval(z);
        let x = x.into_shape_with_order(vec![n, self.ngf, bh, bw]).unwrap();
        let x = self.bn0.forward_eval(&x, bs);
        let x = ops::upsample_nearest2_fwd(&x);
        let x = leaky(self.bn1.forward_eval(&self.conv1.forward_eval(&x), bs));
        let x = ops::upsample_nearest2_fwd(&x);
        let x = leaky(self.bn2.forward_eval(&self.conv2.forward_eval(&x), bs));
        let x = self.conv3.forward_eval(&x);
        (x.mapv(f32::tanh), Vec::new())
    }

    fn tap_ids(&self) -> Vec<String> {
        Vec::new()
    }
}
