//! The distillation loop: the student learns from the teacher on synthetic
//! batches only, alternating k student updates with one generator update per
//! epoch, mixing in replayed batches from the memory bank, and committing a
//! resumable snapshot after every epoch.

use crate::bank::{BankSchedule, MemoryBank};
use crate::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown};
use crate::metrics::MetricsWriter;
use crate::models::{build, ArchParams, ModelHandle, Role};
use crate::persist::{self, checksum_hex, RunDir, RunManifest};
use crate::rng::{seed_all, SeedStreams};
use crate::types::{
    BatchOrigin, DiscrepancyKind, GenLossWeights, KdResponseKind, LatentBatch, SyntheticBatch,
};
use ndarray::{concatenate, Axis};
use nnet::{Graph, Mode, NodeId, Optim};
use std::collections::BTreeMap;
use std::path::Path;

/// One epoch of the run, as logged to the metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    /// Mean distillation loss over the epoch's student steps.
    pub l_kd_mean: f32,
    /// Itemized generator objective of the epoch's generator step.
    pub breakdown: LossBreakdown,
    pub bank_size: usize,
    /// Held-out accuracy, when a probe ran this epoch.
    pub test_acc: Option<f32>,
}

/// Optional held-out evaluation, injected by the caller. Training itself
/// never reads data; a run without a probe touches no dataset at all.
pub trait Probe {
    fn accuracy(&mut self, student: &ModelHandle) -> Result<f32>;
}

/// Which generator-objective groups are active (ablation switches).
#[derive(Debug, Clone, Copy)]
pub struct TermToggles {
    /// Teacher-matching terms: confidence, activation energy, class balance.
    pub match_enabled: bool,
    /// Student-disagreement term.
    pub discrepancy_enabled: bool,
}

/// One student update: distill the teacher's responses on a fresh synthetic
/// batch, concatenated with one replayed batch when the bank has any.
pub fn student_step(
    teacher: &ModelHandle,
    student: &mut ModelHandle,
    generator: &ModelHandle,
    bank: &MemoryBank,
    optim: &mut Optim,
    streams: &mut SeedStreams,
    batch_size: usize,
    kd_kind: KdResponseKind,
) -> Result<f32> {
    let latent_dim = generator.arch_params().latent_dim;
    let lb = streams.next_latent(batch_size, latent_dim);
    let (fresh, _) = generator.forward_eval(&lb.z.into_dyn(), true);
    let x = match bank.sample(&mut streams.bank) {
        Some(mem) => concatenate(Axis(0), &[fresh.view(), mem.images.view()])
            .map_err(|e| Error::Invalid(format!("fresh+replay concat: {e}")))?,
        None => fresh,
    };
    let (t_logits, _) = teacher.forward_eval(&x, false);

    let mut g = Graph::new();
    let xn = g.constant(x);
    let (s_logits, _) = student.forward(&mut g, xn, Mode::Train)?;
    let tn = g.constant(t_logits);
    let kd = losses::node_kd(&mut g, tn, s_logits, kd_kind);
    let value = nnet::ops::to_scalar(g.value(kd));
    student.zero_grads();
    student.absorb_grads(g, kd);
    student.optim_step(optim);
    Ok(value)
}

/// One generator update on a fresh batch only (replayed batches never feed
/// the generator objective). Teacher and student stay fixed; the student runs
/// with batch statistics so the generator attacks the network it actually
/// trains against.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    teacher: &mut ModelHandle,
    student: &mut ModelHandle,
    generator: &mut ModelHandle,
    optim: &mut Optim,
    streams: &mut SeedStreams,
    batch_size: usize,
    weights: GenLossWeights,
    kind: DiscrepancyKind,
    terms: TermToggles,
) -> Result<LossBreakdown> {
    let latent_dim = generator.arch_params().latent_dim;
    let lb = streams.next_latent(batch_size, latent_dim);

    let mut g = Graph::new();
    let zn = g.constant(lb.z.into_dyn());
    let (xn, _) = generator.forward(&mut g, zn, Mode::Train)?;
    let (t_logits, taps) = teacher.forward(&mut g, xn, Mode::Eval)?;
    let (s_logits, _) = student.forward(&mut g, xn, Mode::Frozen)?;
    let pt = nnet::ops::softmax(&mut g, t_logits);

    let scalar_of = |g: &Graph, id: NodeId| nnet::ops::to_scalar(g.value(id)) as f64;
    let mut objective: Vec<(NodeId, f64)> = Vec::new();
    let (mut v_oh, mut v_a, mut v_ie, mut v_d) = (0.0, 0.0, 0.0, 0.0);
    if terms.match_enabled {
        let l_oh = losses::node_one_hot(&mut g, pt);
        let l_a = losses::node_activation(&mut g, &taps);
        let l_ie = losses::node_info_entropy(&mut g, pt);
        v_oh = scalar_of(&g, l_oh);
        v_a = scalar_of(&g, l_a);
        v_ie = scalar_of(&g, l_ie);
        objective.push((l_oh, 1.0));
        objective.push((l_a, weights.alpha as f64));
        objective.push((l_ie, weights.beta as f64));
    }
    if terms.discrepancy_enabled {
        let l_d = match kind {
            DiscrepancyKind::L1 => losses::node_discrepancy(&mut g, t_logits, s_logits, kind),
            _ => {
                let ps = nnet::ops::softmax(&mut g, s_logits);
                losses::node_discrepancy(&mut g, pt, ps, kind)
            }
        };
        v_d = scalar_of(&g, l_d);
        objective.push((l_d, 1.0));
    }
    let total = nnet::ops::weighted_sum(&mut g, &objective);
    generator.zero_grads();
    generator.absorb_grads(g, total);
    generator.optim_step(optim);
    Ok(LossBreakdown::compose(v_oh, v_a, v_ie, v_d, weights))
}

/// Push a fresh synthetic batch into the bank. The latent seed comes from the
/// bank's own stream so bank refreshes never perturb the training latents.
pub fn bank_refresh(
    generator: &ModelHandle,
    bank: &mut MemoryBank,
    streams: &mut SeedStreams,
    batch_size: usize,
    epoch: u64,
) -> Result<()> {
    let sub_seed = rand::Rng::random::<u64>(&mut streams.bank);
    let lb = LatentBatch::sample(sub_seed, batch_size, generator.arch_params().latent_dim);
    let (x, _) = generator.forward_eval(&lb.z.into_dyn(), false);
    bank.update(SyntheticBatch::new(x, BatchOrigin::Fresh, epoch)?, &mut streams.bank)
}

fn make_optim(kind: OptimizerKind, lr: f32) -> Optim {
    match kind {
        OptimizerKind::Adam => Optim::Adam(nnet::Adam::new(lr)),
        OptimizerKind::Sgd => Optim::Sgd(nnet::Sgd::new(lr, 0.9)),
    }
}

fn lr_schedule_note(cfg: &TrainConfig) -> String {
    if cfg.lr_decay_epochs.is_empty() {
        "lr_schedule: constant".to_string()
    } else {
        format!(
            "lr_schedule: x{} at epochs {:?}",
            cfg.lr_decay_factor, cfg.lr_decay_epochs
        )
    }
}

/// Training state assembled either fresh or from a run directory.
struct RunState {
    student: ModelHandle,
    generator: ModelHandle,
    student_optim: Optim,
    generator_optim: Optim,
    bank: MemoryBank,
    streams: SeedStreams,
    writer: MetricsWriter,
    start_epoch: u64,
}

/// Distill `teacher_ckpt` into a fresh student under `cfg`, writing all
/// artifacts below `out_dir`. If `out_dir` already holds a run of the same
/// configuration, training resumes after its last completed epoch; the
/// continuation reproduces an uninterrupted run exactly.
pub fn run(
    cfg: &TrainConfig,
    teacher_ckpt: &Path,
    out_dir: &Path,
    mut probe: Option<&mut (dyn Probe + '_)>,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    let loaded = persist::load_model(teacher_ckpt)?;
    let mut teacher = loaded.handle;
    teacher.freeze();
    let teacher_sum = checksum_hex(teacher.checksum());

    let run_dir = RunDir::new(out_dir);
    run_dir.prepare()?;
    let st = if run_dir.has_manifest() {
        resume_state(cfg, &run_dir, &teacher_sum)?
    } else {
        fresh_state(cfg, &run_dir, teacher.arch_params())?
    };
    let RunState {
        mut student,
        mut generator,
        mut student_optim,
        mut generator_optim,
        mut bank,
        mut streams,
        mut writer,
        start_epoch,
    } = st;

    if start_epoch > cfg.epochs {
        println!(
            "run already covers all {} epochs; nothing to do",
            cfg.epochs
        );
        return Ok(Vec::new());
    }

    let schedule = BankSchedule::new(cfg.bank_update_period_epochs)?;
    let weights = cfg.gen_loss_weights();
    let terms = TermToggles {
        match_enabled: cfg.match_enabled,
        discrepancy_enabled: cfg.discrepancy_enabled,
    };
    let mut reports = Vec::new();

    for epoch in start_epoch..=cfg.epochs {
        let mult = cfg.lr_multiplier_at(epoch);
        student_optim.set_lr(cfg.student_lr * mult);
        generator_optim.set_lr(cfg.generator_lr * mult);

        let mut kd_sum = 0.0f64;
        for _ in 0..cfg.k_student_steps {
            kd_sum += student_step(
                &teacher,
                &mut student,
                &generator,
                &bank,
                &mut student_optim,
                &mut streams,
                cfg.batch_size,
                cfg.kd_response_kind,
            )? as f64;
        }
        let l_kd_mean = (kd_sum / cfg.k_student_steps as f64) as f32;

        let breakdown = generator_step(
            &mut teacher,
            &mut student,
            &mut generator,
            &mut generator_optim,
            &mut streams,
            cfg.batch_size,
            weights,
            cfg.discrepancy_kind,
            terms,
        )?;

        if bank.capacity() > 0 && schedule.should_update(epoch) {
            bank_refresh(&generator, &mut bank, &mut streams, cfg.batch_size, epoch)?;
        }

        let test_acc = match probe.as_deref_mut() {
            Some(p) if epoch % cfg.probe_every_epochs == 0 => Some(p.accuracy(&student)?),
            _ => None,
        };

        let report = EpochReport {
            epoch,
            l_kd_mean,
            breakdown,
            bank_size: bank.len(),
            test_acc,
        };
        writer.append(&report)?;
        match test_acc {
            Some(a) => println!(
                "epoch {epoch}/{}  l_kd {l_kd_mean:.4}  l_gen {:.4}  bank {}  acc {a:.4}",
                cfg.epochs, report.breakdown.l_gen, report.bank_size
            ),
            None => println!(
                "epoch {epoch}/{}  l_kd {l_kd_mean:.4}  l_gen {:.4}  bank {}",
                cfg.epochs, report.breakdown.l_gen, report.bank_size
            ),
        }
        reports.push(report);

        save_epoch(
            cfg,
            &run_dir,
            epoch,
            &teacher_sum,
            &student,
            &generator,
            &student_optim,
            &generator_optim,
            &bank,
            &streams,
        )?;
    }
    Ok(reports)
}

fn fresh_state(cfg: &TrainConfig, run_dir: &RunDir, teacher_params: &ArchParams) -> Result<RunState> {
    let student_params = ArchParams {
        latent_dim: cfg.latent_dim,
        feature_maps: cfg.generator_feature_maps,
        ..*teacher_params
    };
    let student = build(&cfg.student_arch, Role::Student, cfg.seed, &student_params)?;
    let generator = build(&cfg.generator_arch, Role::Generator, cfg.seed, &student_params)?;
    let bank = if cfg.bank_capacity_batches > 0 {
        MemoryBank::new(cfg.bank_capacity_batches, Some(&run_dir.bank_dir()))?
    } else {
        MemoryBank::new(0, None)?
    };
    let writer = MetricsWriter::create(
        &run_dir.metrics_path(),
        &[
            lr_schedule_note(cfg),
            format!("seed: {}", cfg.seed),
            format!(
                "student: {}  generator: {}  discrepancy: {}",
                cfg.student_arch, cfg.generator_arch, cfg.discrepancy_kind
            ),
        ],
    )?;
    Ok(RunState {
        student,
        generator,
        student_optim: make_optim(cfg.student_optimizer, cfg.student_lr),
        generator_optim: make_optim(cfg.generator_optimizer, cfg.generator_lr),
        bank,
        streams: seed_all(cfg.seed),
        writer,
        start_epoch: 1,
    })
}

fn resume_state(cfg: &TrainConfig, run_dir: &RunDir, teacher_sum: &str) -> Result<RunState> {
    let m = run_dir.load_manifest()?;
    let mut prior = m.config.clone();
    prior.epochs = cfg.epochs;
    if prior != *cfg {
        return Err(Error::Config(format!(
            "{} holds a run with different settings; resume requires an identical \
             config (only epochs may grow)",
            run_dir.root().display()
        )));
    }
    if m.teacher_checksum != teacher_sum {
        return Err(Error::Checkpoint(
            "teacher checkpoint differs from the one this run started with".to_string(),
        ));
    }

    let student = restore_model(run_dir, &run_dir.student_ckpt(), &m.student_checksum)?;
    let generator = restore_model(run_dir, &run_dir.generator_ckpt(), &m.generator_checksum)?;
    let mut student_optim = make_optim(cfg.student_optimizer, cfg.student_lr);
    student_optim.load_state_tensors(student.1);
    let mut generator_optim = make_optim(cfg.generator_optimizer, cfg.generator_lr);
    generator_optim.load_state_tensors(generator.1);

    let bank = if cfg.bank_capacity_batches > 0 {
        let bank = MemoryBank::load(cfg.bank_capacity_batches, &run_dir.bank_dir())?;
        if bank.next_file_id() != m.bank_next_file_id {
            return Err(Error::Checkpoint(
                "memory bank advanced past the last committed epoch (partial save); \
                 the interrupted run cannot be reproduced"
                    .to_string(),
            ));
        }
        bank
    } else {
        MemoryBank::new(0, None)?
    };

    let mut streams = seed_all(cfg.seed);
    let (lp, bp) = m.stream_positions()?;
    streams.restore_positions(lp, bp);
    let writer = MetricsWriter::resume(&run_dir.metrics_path(), m.epoch)?;
    println!("resuming after completed epoch {}", m.epoch);
    Ok(RunState {
        student: student.0,
        generator: generator.0,
        student_optim,
        generator_optim,
        bank,
        streams,
        writer,
        start_epoch: m.epoch + 1,
    })
}

fn restore_model(
    run_dir: &RunDir,
    path: &Path,
    expected_sum: &str,
) -> Result<(ModelHandle, Vec<(String, ndarray::ArrayD<f32>)>)> {
    let loaded = persist::load_model(path)?;
    let got = checksum_hex(loaded.handle.checksum());
    if got != expected_sum {
        return Err(Error::Checkpoint(format!(
            "{} does not match the run manifest in {} (partial save detected)",
            path.display(),
            run_dir.root().display()
        )));
    }
    Ok((loaded.handle, loaded.optim_state))
}

#[allow(clippy::too_many_arguments)]
fn save_epoch(
    cfg: &TrainConfig,
    run_dir: &RunDir,
    epoch: u64,
    teacher_sum: &str,
    student: &ModelHandle,
    generator: &ModelHandle,
    student_optim: &Optim,
    generator_optim: &Optim,
    bank: &MemoryBank,
    streams: &SeedStreams,
) -> Result<()> {
    persist::save_model(&run_dir.student_ckpt(), student, Some(student_optim), BTreeMap::new())?;
    persist::save_model(
        &run_dir.generator_ckpt(),
        generator,
        Some(generator_optim),
        BTreeMap::new(),
    )?;
    let (latent_pos, bank_pos) = streams.positions();
    run_dir.save_manifest(&RunManifest {
        format_version: persist::RUN_FORMAT_VERSION,
        seed: cfg.seed,
        epoch,
        student_ckpt: "checkpoints/student.nnt".to_string(),
        generator_ckpt: "checkpoints/generator.nnt".to_string(),
        bank_dir: "bank".to_string(),
        metrics_log: "metrics.log".to_string(),
        latent_pos: latent_pos.to_string(),
        bank_pos: bank_pos.to_string(),
        bank_next_file_id: bank.next_file_id(),
        teacher_checksum: teacher_sum.to_string(),
        student_checksum: checksum_hex(student.checksum()),
        generator_checksum: checksum_hex(generator.checksum()),
        config: cfg.clone(),
    })
}
