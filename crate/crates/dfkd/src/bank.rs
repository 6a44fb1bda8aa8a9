//! Fixed-capacity replay buffer of past synthetic batches.
//!
//! The buffer guards the student against forgetting: as the generator drifts,
//! old synthetic batches stay available for replay.  When full, each insert
//! evicts one uniformly-random stored batch.  Stored content is the inputs
//! only; teacher responses are recomputed on demand since the teacher is
//! frozen.
//!
//! With a directory attached, every stored batch lives as one tensor file
//! named by insertion counter, plus a TOML manifest listing filename, shape,
//! and creation epoch per batch.  The manifest is rewritten via
//! temp-file-and-rename on every update so a crash can never leave a torn
//! manifest; update order is new-file, manifest, then victim deletion, with
//! rollback of the new file if the manifest swap fails.

use crate::error::{Error, Result};
use crate::types::{BatchOrigin, SyntheticBatch};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

const MANIFEST: &str = "manifest.toml";
const FORMAT_VERSION: u32 = 1;

/// When bank updates happen: every `update_period_epochs` epochs, starting at
/// epoch `update_period_epochs` (epochs are 1-indexed).
#[derive(Debug, Clone, Copy)]
pub struct BankSchedule {
    update_period_epochs: u64,
}

impl BankSchedule {
    pub fn new(update_period_epochs: u64) -> Result<Self> {
        if update_period_epochs == 0 {
            return Err(Error::Config("bank update period must be >= 1".into()));
        }
        Ok(Self { update_period_epochs })
    }

    pub fn should_update(&self, epoch: u64) -> bool {
        epoch % self.update_period_epochs == 0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestBatch {
    file: String,
    shape: Vec<usize>,
    created_at_epoch: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    next_file_id: u64,
    #[serde(default)]
    batches: Vec<ManifestBatch>,
}

#[derive(Debug)]
struct Entry {
    batch: SyntheticBatch,
    file: String,
}

/// Ordered list of stored batches with an optional on-disk mirror.
#[derive(Debug)]
pub struct MemoryBank {
    capacity: usize,
    entries: Vec<Entry>,
    next_file_id: u64,
    dir: Option<PathBuf>,
}

impl MemoryBank {
    /// Create an empty bank. With `dir` set, batches are mirrored to disk;
    /// the directory is created and any previous manifest is replaced.
    pub fn new(capacity: usize, dir: Option<&Path>) -> Result<Self> {
        let bank = Self {
            capacity,
            entries: Vec::new(),
            next_file_id: 0,
            dir: dir.map(Path::to_path_buf),
        };
        if let Some(d) = &bank.dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            bank.write_manifest()?;
        }
        Ok(bank)
    }

    /// Reconstruct a bank from its directory, bit-exactly.
    pub fn load(capacity: usize, dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "bank manifest version {} not supported (expected {FORMAT_VERSION})",
                manifest.version
            )));
        }
        if manifest.batches.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "bank on disk holds {} batches but capacity is {capacity}",
                manifest.batches.len()
            )));
        }
        let mut entries = Vec::with_capacity(manifest.batches.len());
        for mb in manifest.batches {
            let path = dir.join(&mb.file);
            let tensors = nnet::tio::read_tensors(&path)
                .map_err(|e| Error::Checkpoint(format!("bank file {}: {e}", mb.file)))?;
            let (_, images) = tensors
                .into_iter()
                .find(|(name, _)| name == "images")
                .ok_or_else(|| {
                    Error::Checkpoint(format!("bank file {}: no images record", mb.file))
                })?;
            if images.shape() != mb.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "bank file {}: shape {:?} does not match manifest {:?}",
                    mb.file,
                    images.shape(),
                    mb.shape
                )));
            }
            entries.push(Entry {
                batch: SyntheticBatch::new(images, BatchOrigin::Memory, mb.created_at_epoch)?,
                file: mb.file,
            });
        }
        Ok(Self {
            capacity,
            entries,
            next_file_id: manifest.next_file_id,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Monotone counter naming the next persisted file. A run manifest
    /// records it so resume can detect a bank that advanced past the last
    /// committed epoch.
    pub fn next_file_id(&self) -> u64 {
        self.next_file_id
    }

    /// Creation epochs of the stored batches, in slot order.
    pub fn stored_epochs(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.batch.created_at_epoch).collect()
    }

    /// Stored batches in slot order (read-only).
    pub fn batches(&self) -> Vec<&SyntheticBatch> {
        self.entries.iter().map(|e| &e.batch).collect()
    }

    /// Insert a fresh batch, evicting one uniformly-random stored batch when
    /// full. A zero-capacity bank ignores the call (and draws no randomness).
    ///
    /// Disk failures leave memory and manifest in the pre-call state; only a
    /// failure to unlink the evicted file afterwards leaves a stray file,
    /// which later loads ignore.
    pub fn update(&mut self, batch: SyntheticBatch, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.capacity == 0 {
            return Ok(());
        }
        if let Some(first) = self.entries.first() {
            if first.batch.images.shape() != batch.images.shape() {
                return Err(Error::Invalid(format!(
                    "batch shape {:?} does not match bank shape {:?}",
                    batch.images.shape(),
                    first.batch.images.shape()
                )));
            }
        }
        let victim = if self.entries.len() == self.capacity {
            Some(rng.random_range(0..self.entries.len()))
        } else {
            None
        };

        let file = format!("batch-{:06}.nnt", self.next_file_id);
        let stored = SyntheticBatch {
            origin: BatchOrigin::Memory,
            ..batch
        };

        if let Some(dir) = self.dir.clone() {
            let path = dir.join(&file);
            if let Err(e) =
                nnet::tio::write_tensors(&path, &[("images".to_string(), stored.images.clone())])
            {
                return Err(Error::Checkpoint(format!("bank file {file}: {e}")));
            }

            // Manifest must describe the post-update state before the victim
            // file disappears.
            let mut post: Vec<(&str, &SyntheticBatch)> = self
                .entries
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != victim)
                .map(|(_, e)| (e.file.as_str(), &e.batch))
                .collect();
            post.push((file.as_str(), &stored));
            let manifest = Manifest {
                version: FORMAT_VERSION,
                next_file_id: self.next_file_id + 1,
                batches: post
                    .iter()
                    .map(|(f, b)| ManifestBatch {
                        file: (*f).to_string(),
                        shape: b.images.shape().to_vec(),
                        created_at_epoch: b.created_at_epoch,
                    })
                    .collect(),
            };
            if let Err(e) = write_manifest_atomic(&dir, &manifest) {
                let _ = std::fs::remove_file(&path);
                return Err(e);
            }
            if let Some(v) = victim {
                let victim_path = dir.join(&self.entries[v].file);
                std::fs::remove_file(&victim_path).map_err(|e| Error::io(&victim_path, e))?;
            }
        }

        if let Some(v) = victim {
            // Ordered removal keeps slot order identical to the manifest's,
            // so a reloaded bank replays future evictions identically.
            self.entries.remove(v);
        }
        self.entries.push(Entry { batch: stored, file });
        self.next_file_id += 1;
        Ok(())
    }

    /// Draw one stored batch uniformly at random; `None` when empty.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Option<&SyntheticBatch> {
        if self.entries.is_empty() {
            return None;
        }
        let idx = rng.random_range(0..self.entries.len());
        Some(&self.entries[idx].batch)
    }

    fn write_manifest(&self) -> Result<()> {
        let dir = self.dir.as_ref().expect("disk-backed bank");
        let manifest = Manifest {
            version: FORMAT_VERSION,
            next_file_id: self.next_file_id,
            batches: self
                .entries
                .iter()
                .map(|e| ManifestBatch {
                    file: e.file.clone(),
                    shape: e.batch.images.shape().to_vec(),
                    created_at_epoch: e.batch.created_at_epoch,
                })
                .collect(),
        };
        write_manifest_atomic(dir, &manifest)
    }
}

fn write_manifest_atomic(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = toml::to_string(manifest).expect("manifest serializes");
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let final_path = dir.join(MANIFEST);
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn update_rejects_mismatched_shapes() {
        let mut rng = stream(0, StreamId::Bank);
        let mut bank = MemoryBank::new(2, None).unwrap();
        let a = SyntheticBatch::new(
            ArrayD::zeros(IxDyn(&[2, 1, 2, 2])),
            BatchOrigin::Fresh,
            1,
        )
        .unwrap();
        let b = SyntheticBatch::new(
            ArrayD::zeros(IxDyn(&[2, 1, 4, 4])),
            BatchOrigin::Fresh,
            2,
        )
        .unwrap();
        bank.update(a, &mut rng).unwrap();
        assert!(bank.update(b, &mut rng).is_err());
    }

    #[test]
    fn single_stored_batch_is_always_the_sample() {
        let mut rng = stream(1, StreamId::Bank);
        let mut bank = MemoryBank::new(3, None).unwrap();
        let b = SyntheticBatch::new(
            ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5),
            BatchOrigin::Fresh,
            9,
        )
        .unwrap();
        bank.update(b, &mut rng).unwrap();
        for _ in 0..20 {
            let got = bank.sample(&mut rng).unwrap();
            assert_eq!(got.created_at_epoch, 9);
            assert_eq!(got.origin, BatchOrigin::Memory);
        }
    }
}
