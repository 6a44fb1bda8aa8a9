//! Architecture registry and the model handle used by the training loops.

mod generator;
mod lenet;
mod mobilenet;
mod resnet;
mod toy;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};
use crate::types::LogitBatch;
use ndarray::{Array2, ArrayD, Ix2};
use nnet::{Graph, Mode, Module, NodeId};
use std::collections::BTreeMap;

/// Registered architecture identifiers.
pub const KNOWN_ARCHS: &[&str] = &[
    "lenet5",
    "lenet5-half",
    "resnet34",
    "resnet18",
    "mobilenetv2",
    "dcgan-generator",
    "toy-mlp",
    "toy-mlp-half",
    "toy-generator",
];

/// What part a network plays in distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
    Generator,
}

impl Role {
    fn init_stream(self) -> StreamId {
        match self {
            Role::Teacher => StreamId::InitTeacher,
            Role::Student => StreamId::InitStudent,
            Role::Generator => StreamId::InitGenerator,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::Generator => "generator",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            "generator" => Ok(Role::Generator),
            other => Err(Error::Invalid(format!("unknown model role '{other}'"))),
        }
    }
}

/// Constructor parameters shared by all architectures. Classifiers read
/// `in_channels`/`num_classes`/`image_hw`; generators read `latent_dim`,
/// `feature_maps`, and produce `in_channels x image_hw` outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchParams {
    pub in_channels: usize,
    pub num_classes: usize,
    pub image_hw: (usize, usize),
    pub latent_dim: usize,
    pub feature_maps: usize,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 10,
            image_hw: (32, 32),
            latent_dim: 100,
            feature_maps: 64,
        }
    }
}

/// Internal interface every architecture implements. `forward` builds onto an
/// autodiff tape and returns the output node plus feature-tap nodes;
/// `forward_eval` is the tape-free twin returning plain arrays.
pub(crate) trait Network: Module {
    fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> (NodeId, Vec<NodeId>);
    fn forward_eval(&self, x: &ArrayD<f32>, batch_stats: bool) -> (ArrayD<f32>, Vec<ArrayD<f32>>);
    fn tap_ids(&self) -> Vec<String>;
}

/// A built network with its distillation role and freeze state.
pub struct ModelHandle {
    role: Role,
    arch_id: String,
    frozen: bool,
    params: ArchParams,
    net: Box<dyn Network>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("role", &self.role)
            .field("arch_id", &self.arch_id)
            .field("frozen", &self.frozen)
            .field("param_count", &self.param_count())
            .finish()
    }
}

/// Build an architecture with deterministic, role-salted initialization.
pub fn build(arch_id: &str, role: Role, seed: u64, p: &ArchParams) -> Result<ModelHandle> {
    let mut rng = stream(seed, role.init_stream());
    let net: Box<dyn Network> = match arch_id {
        "lenet5" => Box::new(lenet::LeNet5::new(&mut rng, p, false)),
        "lenet5-half" => Box::new(lenet::LeNet5::new(&mut rng, p, true)),
        "resnet34" => Box::new(resnet::ResNet::new(&mut rng, p, &[3, 4, 6, 3])),
        "resnet18" => Box::new(resnet::ResNet::new(&mut rng, p, &[2, 2, 2, 2])),
        "mobilenetv2" => Box::new(mobilenet::MobileNetV2::new(&mut rng, p)),
        "dcgan-generator" => Box::new(generator::DcganGenerator::new(&mut rng, p)?),
        "toy-mlp" => Box::new(toy::ToyMlp::new(&mut rng, p, 32)),
        "toy-mlp-half" => Box::new(toy::ToyMlp::new(&mut rng, p, 12)),
        "toy-generator" => Box::new(toy::ToyGenerator::new(&mut rng, p)),
        other => {
            return Err(Error::UnknownArch {
                id: other.to_string(),
                known: KNOWN_ARCHS.join(", "),
            })
        }
    };
    Ok(ModelHandle {
        role,
        arch_id: arch_id.to_string(),
        frozen: false,
        params: *p,
        net,
    })
}

impl ModelHandle {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn arch_params(&self) -> &ArchParams {
        &self.params
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// Stop all parameter updates. Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Re-enable parameter updates. The teacher stays frozen for good.
    pub fn unfreeze(&mut self) -> Result<()> {
        if self.role == Role::Teacher {
            return Err(Error::Invalid(
                "the teacher never unfreezes during distillation".into(),
            ));
        }
        self.frozen = false;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn tap_ids(&self) -> Vec<String> {
        self.net.tap_ids()
    }

    /// Tape forward pass. Frozen models reject `Mode::Train`; pass
    /// `Mode::Frozen` to keep batch statistics without trainable parameters.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        if self.frozen && mode == Mode::Train {
            return Err(Error::Invalid(format!(
                "{} is frozen and cannot run in train mode",
                self.role.as_str()
            )));
        }
        Ok(self.net.forward(g, x, mode))
    }

    /// Tape-free forward pass returning raw output and tap arrays.
    pub fn forward_eval(
        &self,
        x: &ArrayD<f32>,
        batch_stats: bool,
    ) -> (ArrayD<f32>, Vec<Array2<f32>>) {
        let (out, taps) = self.net.forward_eval(x, batch_stats);
        let taps = taps
            .into_iter()
            .map(|t| t.into_dimensionality::<Ix2>().expect("taps are 2-d"))
            .collect();
        (out, taps)
    }

    /// Tape-free classifier logits with running statistics.
    pub fn eval_logits(&self, x: &ArrayD<f32>) -> Result<LogitBatch> {
        let (out, _) = self.forward_eval(x, false);
        LogitBatch::from_dyn(out)
    }

    /// All parameters and buffers as named tensors, in visit order.
    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.net.visit_params(&mut |name, p| {
            out.push((name.to_string(), (*p.value).clone()));
        });
        self.net.visit_buffers(&mut |name, b| {
            out.push((name.to_string(), b.clone()));
        });
        out
    }

    /// Restore parameters and buffers from named tensors. Every tensor must
    /// match an existing name and shape, and none may be missing.
    pub fn load_named_tensors(&mut self, tensors: Vec<(String, ArrayD<f32>)>) -> Result<()> {
        let mut map: BTreeMap<String, ArrayD<f32>> = tensors.into_iter().collect();
        let mut err: Option<Error> = None;
        self.net.visit_params_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match map.remove(name) {
                Some(t) if t.shape() == p.shape() => *p.value_mut() = t,
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {name}: shape {:?} does not match model {:?}",
                        t.shape(),
                        p.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("tensor {name} missing"))),
            }
        });
        self.net.visit_buffers_mut(&mut |name, b| {
            if err.is_some() {
                return;
            }
            match map.remove(name) {
                Some(t) if t.shape() == b.shape() => *b = t,
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "buffer {name}: shape {:?} does not match model {:?}",
                        t.shape(),
                        b.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("buffer {name} missing"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(name) = map.into_keys().next() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} does not belong to arch {}",
                self.arch_id
            )));
        }
        Ok(())
    }

    /// FNV-1a digest over every parameter and buffer byte, in visit order.
    /// Bit-stable: equal checksums mean bit-identical weights.
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |a: &ArrayD<f32>| {
            for v in a.iter() {
                for byte in v.to_bits().to_le_bytes() {
                    h = (h ^ byte as u64).wrapping_mul(PRIME);
                }
            }
        };
        self.net.visit_params(&mut |_, p| eat(&p.value));
        self.net.visit_buffers(&mut |_, b| eat(b));
        h
    }

    /// Apply one optimizer step. The caller routes gradients; this guard
    /// backs up the freezing contract.
    pub fn optim_step(&mut self, optim: &mut nnet::Optim) {
        assert!(!self.frozen, "optimizer step on a frozen model");
        optim.step(&mut *self.net);
    }

    /// Move gradients accumulated on a consumed tape into this model.
    pub fn absorb_grads(&mut self, g: Graph, root: NodeId) {
        assert!(!self.frozen, "gradient absorption into a frozen model");
        nnet::backward_into(g, root, &mut *self.net);
    }

    pub fn zero_grads(&mut self) {
        nnet::zero_grads(&mut *self.net);
    }
}
