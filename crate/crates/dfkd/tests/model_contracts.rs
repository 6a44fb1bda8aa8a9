//! Architecture contracts: parameter counts, shapes, determinism, and the
//! freezing rules.

use dfkd::models::{build, ArchParams, Role};
use ndarray::{ArrayD, IxDyn};
use nnet::Mode;

fn mnist_params() -> ArchParams {
    ArchParams {
        in_channels: 1,
        num_classes: 10,
        image_hw: (32, 32),
        latent_dim: 100,
        feature_maps: 64,
    }
}

fn cifar_params() -> ArchParams {
    ArchParams {
        in_channels: 3,
        ..mnist_params()
    }
}

fn toy_params() -> ArchParams {
    ArchParams {
        num_classes: 3,
        latent_dim: 8,
        ..mnist_params()
    }
}

fn image(n: usize, c: usize, hw: usize) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(&[n, c, hw, hw]), |_| 0.1)
}

#[test]
fn parameter_counts_match_hand_tallies() {
    // conv 156 + conv 2416 + conv 48120 + fc 10164 + fc 850
    let teacher = build("lenet5", Role::Teacher, 0, &mnist_params()).unwrap();
    assert_eq!(teacher.param_count(), 61_706);

    // conv 78 + conv 608 + conv 12060 + fc 2562 + fc 430
    let student = build("lenet5-half", Role::Student, 0, &mnist_params()).unwrap();
    assert_eq!(student.param_count(), 15_738);
    assert!(student.param_count() < teacher.param_count());

    // standard 32x32 residual-network tallies
    let r18 = build("resnet18", Role::Student, 0, &cifar_params()).unwrap();
    assert_eq!(r18.param_count(), 11_173_962);
    let r34 = build("resnet34", Role::Teacher, 0, &cifar_params()).unwrap();
    assert_eq!(r34.param_count(), 21_282_122);
    assert!(r18.param_count() < r34.param_count());

    let mobile = build("mobilenetv2", Role::Student, 0, &cifar_params()).unwrap();
    assert!(mobile.param_count() < r34.param_count());
}

#[test]
fn classifier_shapes_and_taps() {
    let mut net = build("lenet5", Role::Teacher, 1, &mnist_params()).unwrap();
    let x = image(2, 1, 32);
    let (logits, taps) = net.forward_eval(&x, false);
    assert_eq!(logits.shape(), &[2, 10]);
    assert_eq!(taps.len(), 1);
    assert_eq!(taps[0].shape(), &[2, 120]);
    assert_eq!(net.tap_ids().len(), 1);

    // graph forward agrees with the tape-free pass
    let mut g = nnet::Graph::new();
    let xn = g.constant(x.clone());
    let (ln, tn) = net.forward(&mut g, xn, Mode::Eval).unwrap();
    for (a, b) in g.value(ln).iter().zip(logits.iter()) {
        assert!((a - b).abs() <= 1e-5, "graph vs eval logits: {a} vs {b}");
    }
    assert_eq!(tn.len(), 1);

    let mut toy = build("toy-mlp", Role::Teacher, 1, &toy_params()).unwrap();
    let pts = ArrayD::from_shape_fn(IxDyn(&[5, 2]), |_| 0.3);
    let (logits, taps) = toy.forward_eval(&pts, false);
    assert_eq!(logits.shape(), &[5, 3]);
    assert_eq!(taps[0].shape(), &[5, 32]);
    let mut g = nnet::Graph::new();
    let xn = g.constant(pts);
    let (ln, _) = toy.forward(&mut g, xn, Mode::Eval).unwrap();
    assert_eq!(g.value(ln).shape(), &[5, 3]);
}

#[test]
fn deeper_classifiers_run_forward() {
    for (arch, feat) in [("resnet18", 512), ("mobilenetv2", 1280)] {
        let net = build(arch, Role::Student, 2, &cifar_params()).unwrap();
        let (logits, taps) = net.forward_eval(&image(2, 3, 32), false);
        assert_eq!(logits.shape(), &[2, 10], "{arch}");
        assert_eq!(taps[0].shape(), &[2, feat], "{arch}");
    }
}

#[test]
fn generator_output_matches_teacher_input_shape() {
    let p = mnist_params();
    let gen = build("dcgan-generator", Role::Generator, 3, &p).unwrap();
    let z = ArrayD::from_shape_fn(IxDyn(&[4, p.latent_dim]), |_| 0.5);
    let (x, taps) = gen.forward_eval(&z, true);
    assert_eq!(x.shape(), &[4, 1, 32, 32]);
    assert!(taps.is_empty());
    assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)), "tanh range");

    let toy_gen = build("toy-generator", Role::Generator, 3, &toy_params()).unwrap();
    let z = ArrayD::from_shape_fn(IxDyn(&[6, 8]), |_| -0.2);
    let (pts, _) = toy_gen.forward_eval(&z, true);
    assert_eq!(pts.shape(), &[6, 2]);
}

#[test]
fn initialization_is_seed_deterministic_and_role_salted() {
    let p = mnist_params();
    let a = build("lenet5-half", Role::Student, 7, &p).unwrap();
    let b = build("lenet5-half", Role::Student, 7, &p).unwrap();
    assert_eq!(a.checksum(), b.checksum());

    let c = build("lenet5-half", Role::Student, 8, &p).unwrap();
    assert_ne!(a.checksum(), c.checksum());

    // same seed, different role -> different init stream
    let d = build("lenet5-half", Role::Teacher, 7, &p).unwrap();
    assert_ne!(a.checksum(), d.checksum());
}

#[test]
fn unknown_arch_error_lists_known_ids() {
    let err = build("lenet6", Role::Teacher, 0, &mnist_params())
        .unwrap_err()
        .to_string();
    assert!(err.contains("lenet6"));
    assert!(err.contains("lenet5") && err.contains("dcgan-generator"));
}

#[test]
fn freezing_contract() {
    let p = mnist_params();
    let mut teacher = build("lenet5", Role::Teacher, 0, &p).unwrap();
    teacher.freeze();
    teacher.freeze(); // idempotent
    assert!(teacher.frozen());
    assert!(teacher.unfreeze().is_err(), "teacher must stay frozen");
    assert!(teacher.frozen());

    let mut g = nnet::Graph::new();
    let x = g.constant(image(1, 1, 32));
    assert!(teacher.forward(&mut g, x, Mode::Train).is_err());
    assert!(teacher.forward(&mut g, x, Mode::Frozen).is_ok());

    let mut student = build("lenet5-half", Role::Student, 0, &p).unwrap();
    student.freeze();
    student.unfreeze().unwrap();
    assert!(!student.frozen());
}

#[test]
fn named_tensor_round_trip_restores_checksum() {
    let p = mnist_params();
    let a = build("dcgan-generator", Role::Generator, 11, &p).unwrap();
    let mut b = build("dcgan-generator", Role::Generator, 12, &p).unwrap();
    assert_ne!(a.checksum(), b.checksum());
    b.load_named_tensors(a.named_tensors()).unwrap();
    assert_eq!(a.checksum(), b.checksum());

    // wrong-arch tensors are rejected with the offending name
    let mut narrow = build("toy-mlp", Role::Teacher, 0, &toy_params()).unwrap();
    let err = narrow
        .load_named_tensors(a.named_tensors())
        .unwrap_err()
        .to_string();
    assert!(err.contains("missing") || err.contains("does not belong"), "{err}");
}

#[test]
fn batch_stats_differ_from_running_stats_for_norm_layers() {
    // A fresh generator has identity running stats, so a nonzero input batch
    // must produce different outputs under the two statistics modes.
    let p = mnist_params();
    let gen = build("dcgan-generator", Role::Generator, 4, &p).unwrap();
    let z = ArrayD::from_shape_fn(IxDyn(&[3, p.latent_dim]), |ix| {
        (ix[0] as f32 - 1.0) * 0.7 + ix[1] as f32 * 0.001
    });
    let (batch, _) = gen.forward_eval(&z, true);
    let (running, _) = gen.forward_eval(&z, false);
    let diff: f32 = batch
        .iter()
        .zip(running.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-3, "statistics mode must matter, diff {diff}");
}
