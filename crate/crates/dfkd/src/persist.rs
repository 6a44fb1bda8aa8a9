//! Run-artifact storage: single-file model checkpoints (weights plus
//! optimizer state), the per-run manifest that makes interruption
//! recoverable, and the atomic-replacement primitives both rely on.
//!
//! Directory layout of a run:
//!
//! ```text
//! out/
//!   run.toml            manifest, rewritten atomically after each epoch
//!   checkpoints/        student.nnt, generator.nnt
//!   bank/               replay-buffer manifest and batch files
//!   metrics.log         one line per epoch
//! ```

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::models::{build, ArchParams, ModelHandle, Role};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Bumped only on incompatible layout changes; readers refuse unknown values.
pub const RUN_FORMAT_VERSION: u32 = 1;
const CKPT_FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "run.toml";
const METRICS_FILE: &str = "metrics.log";
const META_RECORD: &str = "__meta__";
const MODEL_PREFIX: &str = "model.";
const OPTIM_PREFIX: &str = "optim.";

/// Replace `path` in one step: write a temp sibling, then rename it over the
/// target, so a reader (or a crash) sees the old or the new file, never a
/// torn one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_sibling(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Atomic variant of the tensor-container writer.
pub fn write_tensors_atomic(path: &Path, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
    let tmp = tmp_sibling(path);
    nnet::tio::write_tensors(&tmp, tensors)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_string());
    name.push_str(".tmp");
    path.with_file_name(name)
}

/// Everything needed to rebuild a model from its checkpoint without guessing:
/// the architecture id and its constructor parameters, plus free-form notes
/// (dataset, accuracy, epochs) that commands print back to the operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub arch_id: String,
    pub role: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub latent_dim: usize,
    pub feature_maps: usize,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    fn from_handle(handle: &ModelHandle, extra: BTreeMap<String, String>) -> Self {
        let p = handle.arch_params();
        Self {
            format_version: CKPT_FORMAT_VERSION,
            arch_id: handle.arch_id().to_string(),
            role: handle.role().as_str().to_string(),
            in_channels: p.in_channels,
            num_classes: p.num_classes,
            image_h: p.image_hw.0,
            image_w: p.image_hw.1,
            latent_dim: p.latent_dim,
            feature_maps: p.feature_maps,
            extra,
        }
    }

    pub fn arch_params(&self) -> ArchParams {
        ArchParams {
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            image_hw: (self.image_h, self.image_w),
            latent_dim: self.latent_dim,
            feature_maps: self.feature_maps,
        }
    }
}

/// A checkpoint is one tensor container; metadata rides along as a byte
/// tensor so the file stays self-contained (values 0-255 are exact in f32).
fn meta_to_tensor(meta: &CheckpointMeta) -> Result<ArrayD<f32>> {
    let text = toml::to_string(meta)
        .map_err(|e| Error::Checkpoint(format!("encode metadata: {e}")))?;
    let data: Vec<f32> = text.bytes().map(f32::from).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&[data.len()]), data).expect("1-d byte tensor"))
}

fn meta_from_tensor(arr: &ArrayD<f32>) -> Result<CheckpointMeta> {
    let mut bytes = Vec::with_capacity(arr.len());
    for &v in arr {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::Checkpoint("corrupt metadata record".to_string()));
        }
        bytes.push(v as u8);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Checkpoint("metadata is not utf-8".to_string()))?;
    let meta: CheckpointMeta = toml::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse metadata: {e}")))?;
    if meta.format_version != CKPT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format v{} not supported (expected v{CKPT_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Write a model (and, when given, its optimizer state) as one atomic file.
pub fn save_model(
    path: &Path,
    handle: &ModelHandle,
    optim: Option<&nnet::Optim>,
    extra: BTreeMap<String, String>,
) -> Result<()> {
    let meta = CheckpointMeta::from_handle(handle, extra);
    let mut tensors = vec![(META_RECORD.to_string(), meta_to_tensor(&meta)?)];
    for (name, arr) in handle.named_tensors() {
        tensors.push((format!("{MODEL_PREFIX}{name}"), arr));
    }
    if let Some(optim) = optim {
        for (name, arr) in optim.state_tensors() {
            tensors.push((format!("{OPTIM_PREFIX}{name}"), arr));
        }
    }
    write_tensors_atomic(path, &tensors)
}

/// A checkpoint read back into a freshly built model. The optimizer state is
/// returned as tensors for the caller to feed into whatever optimizer the
/// run constructs.
pub struct LoadedModel {
    pub meta: CheckpointMeta,
    pub handle: ModelHandle,
    pub optim_state: Vec<(String, ArrayD<f32>)>,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let records =
        nnet::tio::read_tensors(path).map_err(|e| Error::Checkpoint(format!(
            "read {}: {e}",
            path.display()
        )))?;
    let mut meta: Option<CheckpointMeta> = None;
    let mut model = Vec::new();
    let mut optim_state = Vec::new();
    for (name, arr) in records {
        if name == META_RECORD {
            meta = Some(meta_from_tensor(&arr)?);
        } else if let Some(rest) = name.strip_prefix(MODEL_PREFIX) {
            model.push((rest.to_string(), arr));
        } else if let Some(rest) = name.strip_prefix(OPTIM_PREFIX) {
            optim_state.push((rest.to_string(), arr));
        } else {
            return Err(Error::Checkpoint(format!(
                "unexpected record '{name}' in {}",
                path.display()
            )));
        }
    }
    let meta = meta.ok_or_else(|| {
        Error::Checkpoint(format!("{} has no metadata record", path.display()))
    })?;
    let role: Role = meta.role.parse()?;
    let mut handle = build(&meta.arch_id, role, 0, &meta.arch_params())?;
    handle.load_named_tensors(model)?;
    Ok(LoadedModel {
        meta,
        handle,
        optim_state,
    })
}

/// The per-run manifest: the commit point of an epoch. Everything it names
/// is written first; once the manifest renames into place the epoch is
/// durable, and resume cross-checks the recorded checksums and counters to
/// detect a save that only partially landed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub seed: u64,
    /// Last completed epoch (1-indexed; 0 = nothing trained yet).
    pub epoch: u64,
    pub student_ckpt: String,
    pub generator_ckpt: String,
    pub bank_dir: String,
    pub metrics_log: String,
    /// Word offsets of the named random streams, decimal u128.
    pub latent_pos: String,
    pub bank_pos: String,
    pub bank_next_file_id: u64,
    /// Parameter checksums as hex, cross-checked on resume.
    pub teacher_checksum: String,
    pub student_checksum: String,
    pub generator_checksum: String,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn stream_positions(&self) -> Result<(u128, u128)> {
        let parse = |label: &str, s: &str| -> Result<u128> {
            s.parse::<u128>()
                .map_err(|_| Error::Checkpoint(format!("manifest {label} '{s}' is not a number")))
        };
        Ok((
            parse("latent_pos", &self.latent_pos)?,
            parse("bank_pos", &self.bank_pos)?,
        ))
    }
}

pub fn checksum_hex(sum: u64) -> String {
    format!("{sum:016x}")
}

/// Paths of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn student_ckpt(&self) -> PathBuf {
        self.root.join("checkpoints").join("student.nnt")
    }

    pub fn generator_ckpt(&self) -> PathBuf {
        self.root.join("checkpoints").join("generator.nnt")
    }

    pub fn bank_dir(&self) -> PathBuf {
        self.root.join("bank")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn has_manifest(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn prepare(&self) -> Result<()> {
        let ckpts = self.root.join("checkpoints");
        std::fs::create_dir_all(&ckpts).map_err(|e| Error::io(&ckpts, e))?;
        Ok(())
    }

    pub fn save_manifest(&self, m: &RunManifest) -> Result<()> {
        let text =
            toml::to_string_pretty(m).map_err(|e| Error::Checkpoint(format!("encode manifest: {e}")))?;
        write_atomic(&self.manifest_path(), text.as_bytes())
    }

    pub fn load_manifest(&self) -> Result<RunManifest> {
        let path = self.manifest_path();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = toml::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if m.format_version != RUN_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "run manifest format v{} not supported (expected v{RUN_FORMAT_VERSION})",
                m.format_version
            )));
        }
        if m.epoch > m.config.epochs {
            return Err(Error::Checkpoint(format!(
                "manifest records epoch {} beyond the configured {} epochs",
                m.epoch, m.config.epochs
            )));
        }
        Ok(m)
    }
}
