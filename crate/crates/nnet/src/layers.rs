//! Parameterized layers over the graph ops, plus the [`Module`] trait used
//! for optimizer traversal and checkpointing.

use crate::graph::{Graph, NodeId, Param};
use crate::ops;
use ndarray::{ArrayD, IxDyn};

/// Execution mode for a forward pass. It controls two independent things at
/// once because they always move together in this codebase:
///
/// * whether parameters are trainable (gradients requested) — only in `Train`;
/// * which statistics batchnorm uses — the current batch in `Train` and
///   `Frozen`, the running buffers in `Eval`. Running buffers are updated
///   only in `Train`.
///
/// `Frozen` is what a network in "training posture" looks like while another
/// network's step is running: its batchnorm still reacts to the batch, but
/// nothing about it is updated, and gradients flow through it to its inputs
/// without being accumulated for its own weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Frozen,
    Eval,
}

impl Mode {
    pub fn trainable(self) -> bool {
        matches!(self, Mode::Train)
    }

    pub fn batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::Frozen)
    }
}

/// Anything with named parameters and buffers. Visit order must be stable,
/// since optimizers and checkpoints key state by the visited names.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));
    /// Non-trainable state (batchnorm running statistics).
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        let _ = f;
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        let _ = f;
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Visit a child module's parameters under a dotted name prefix.
pub fn visit_child(prefix: &str, child: &dyn Module, f: &mut dyn FnMut(&str, &Param)) {
    child.visit_params(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

pub fn visit_child_mut(prefix: &str, child: &mut dyn Module, f: &mut dyn FnMut(&str, &mut Param)) {
    child.visit_params_mut(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

pub fn visit_child_buffers(prefix: &str, child: &dyn Module, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
    child.visit_buffers(&mut |n, b| f(&format!("{prefix}.{n}"), b));
}

pub fn visit_child_buffers_mut(
    prefix: &str,
    child: &mut dyn Module,
    f: &mut dyn FnMut(&str, &mut ArrayD<f32>),
) {
    child.visit_buffers_mut(&mut |n, b| f(&format!("{prefix}.{n}"), b));
}

/// 2-d convolution layer.
pub struct Conv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward(&self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let w = g.param_leaf(&self.w, mode.trainable());
        let b = self.b.as_ref().map(|b| g.param_leaf(b, mode.trainable()));
        ops::conv2d(g, x, w, b, self.stride, self.pad)
    }

    pub fn forward_eval(&self, x: &ArrayD<f32>) -> ArrayD<f32> {
        ops::conv2d_fwd(
            x,
            &self.w.value,
            self.b.as_ref().map(|b| &*b.value),
            self.stride,
            self.pad,
        )
    }
}

impl Module for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        if let Some(b) = &self.b {
            f("b", b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        if let Some(b) = &mut self.b {
            f("b", b);
        }
    }
}

/// Depthwise 2-d convolution layer (one filter per channel).
pub struct DepthwiseConv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn forward(&self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let w = g.param_leaf(&self.w, mode.trainable());
        let b = self.b.as_ref().map(|b| g.param_leaf(b, mode.trainable()));
        ops::depthwise_conv2d(g, x, w, b, self.stride, self.pad)
    }

    pub fn forward_eval(&self, x: &ArrayD<f32>) -> ArrayD<f32> {
        ops::depthwise_conv2d_fwd(
            x,
            &self.w.value,
            self.b.as_ref().map(|b| &*b.value),
            self.stride,
            self.pad,
        )
    }
}

impl Module for DepthwiseConv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        if let Some(b) = &self.b {
            f("b", b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        if let Some(b) = &mut self.b {
            f("b", b);
        }
    }
}

/// Fully connected layer.
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let w = g.param_leaf(&self.w, mode.trainable());
        let b = self.b.as_ref().map(|b| g.param_leaf(b, mode.trainable()));
        ops::linear(g, x, w, b)
    }

    pub fn forward_eval(&self, x: &ArrayD<f32>) -> ArrayD<f32> {
        ops::linear_fwd(x, &self.w.value, self.b.as_ref().map(|b| &*b.value))
    }
}

impl Module for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        if let Some(b) = &self.b {
            f("b", b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        if let Some(b) = &mut self.b {
            f("b", b);
        }
    }
}

/// Batch normalization over channels of (n, c, h, w).
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f32>,
    pub running_var: ArrayD<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::from_elem(IxDyn(&[c]), 1.0)),
            beta: Param::new(ArrayD::zeros(IxDyn(&[c]))),
            running_mean: ArrayD::zeros(IxDyn(&[c])),
            running_var: ArrayD::from_elem(IxDyn(&[c]), 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Forward on the tape. `Train` additionally folds the batch statistics
    /// into the running buffers, which is why this takes `&mut self`.
    pub fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> NodeId {
        let gamma = g.param_leaf(&self.gamma, mode.trainable());
        let beta = g.param_leaf(&self.beta, mode.trainable());
        let (y, stats) = ops::batchnorm2d(
            g,
            x,
            gamma,
            beta,
            &self.running_mean,
            &self.running_var,
            mode.batch_stats(),
            self.eps,
        );
        if mode == Mode::Train {
            let stats = stats.expect("batch stats are computed in Train mode");
            self.fold_running(&stats.mean, &stats.var_unbiased);
        }
        y
    }

    /// Forward without a tape. `batch_stats` selects frozen-training
    /// normalization (batch statistics, no buffer update) over inference
    /// normalization (running buffers).
    pub fn forward_eval(&self, x: &ArrayD<f32>, batch_stats: bool) -> ArrayD<f32> {
        if batch_stats {
            let (y, _, _, _) =
                ops::batchnorm2d_train_fwd(x, &self.gamma.value, &self.beta.value, self.eps);
            y
        } else {
            ops::batchnorm2d_eval_fwd(
                x,
                &self.gamma.value,
                &self.beta.value,
                &self.running_mean,
                &self.running_var,
                self.eps,
            )
        }
    }

    fn fold_running(&mut self, mean: &[f32], var_unbiased: &[f32]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var_unbiased) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

impl Module for BatchNorm2d {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &ArrayD<f32>)) {
        f("running_mean", &self.running_mean);
        f("running_var", &self.running_var);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}
