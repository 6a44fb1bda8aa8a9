//! Labeled-dataset loading, teacher pre-training, and accuracy probes.
//!
//! Real data appears in exactly two places: pre-training the teacher and
//! measuring accuracy. The distillation loop itself never reads a dataset —
//! probes here are evaluation-only and feed nothing back into training.
//!
//! Archives are read from `$DFKD_DATA_DIR` (default `./data`), one
//! subdirectory per dataset, in each dataset's standard published format.
//! Nothing is downloaded; a missing file produces an error naming the file
//! and where to get it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, ArrayD, Axis, Ix2, IxDyn};
use rand::seq::SliceRandom;

use crate::distill::Probe;
use crate::error::{Error, Result};
use crate::models::{self, ArchParams, ModelHandle, Role};
use crate::persist;
use crate::rng::{stream, StreamId};
use nnet::ops::act;
use nnet::{Graph, Mode, NodeId, Optim};

/// Environment variable overriding the dataset root directory.
pub const DATA_DIR_ENV: &str = "DFKD_DATA_DIR";

/// Pixel range every loader maps into, matching the generator's tanh output
/// so real and synthetic batches live on the same scale.
pub const PIXEL_RANGE: (f32, f32) = (-1.0, 1.0);

// ---------------------------------------------------------------------------
// Dataset identities
// ---------------------------------------------------------------------------

/// The supported labeled datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Svhn,
    Cifar10,
    Cifar100,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
            DatasetName::Svhn => "svhn",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
        }
    }

    pub const ALL: [DatasetName; 5] = [
        DatasetName::Mnist,
        DatasetName::FashionMnist,
        DatasetName::Svhn,
        DatasetName::Cifar10,
        DatasetName::Cifar100,
    ];
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion-mnist" | "fmnist" => Ok(DatasetName::FashionMnist),
            "svhn" => Ok(DatasetName::Svhn),
            "cifar10" => Ok(DatasetName::Cifar10),
            "cifar100" => Ok(DatasetName::Cifar100),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}'; known: mnist, fashion-mnist, svhn, cifar10, cifar100"
            ))),
        }
    }
}

/// Canonical shape and split sizes for a dataset. Loaders validate against
/// these so a truncated or mismatched archive fails loudly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub train_size: usize,
    pub test_size: usize,
    /// Per-sample shape `[channels, height, width]` after loading (28x28
    /// sources are zero-padded to 32x32 so every classifier sees one size).
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl DatasetSpec {
    pub fn of(name: DatasetName) -> Self {
        match name {
            DatasetName::Mnist => Self {
                name,
                train_size: 60_000,
                test_size: 10_000,
                input_shape: [1, 32, 32],
                num_classes: 10,
            },
            DatasetName::FashionMnist => Self {
                name,
                train_size: 60_000,
                test_size: 10_000,
                input_shape: [1, 32, 32],
                num_classes: 10,
            },
            DatasetName::Svhn => Self {
                name,
                train_size: 73_257,
                test_size: 26_032,
                input_shape: [3, 32, 32],
                num_classes: 10,
            },
            DatasetName::Cifar10 => Self {
                name,
                train_size: 50_000,
                test_size: 10_000,
                input_shape: [3, 32, 32],
                num_classes: 10,
            },
            DatasetName::Cifar100 => Self {
                name,
                train_size: 50_000,
                test_size: 10_000,
                input_shape: [3, 32, 32],
                num_classes: 100,
            },
        }
    }

    /// Architecture constructor parameters implied by this dataset.
    pub fn arch_params(&self) -> ArchParams {
        ArchParams {
            in_channels: self.input_shape[0],
            num_classes: self.num_classes,
            image_hw: (self.input_shape[1], self.input_shape[2]),
            ..ArchParams::default()
        }
    }
}

/// Which half of the canonical split to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// An in-memory labeled set: images normalized to [`PIXEL_RANGE`], integer
/// labels in `0..num_classes`.
#[derive(Debug, Clone)]
pub struct LabeledData {
    /// `(n, channels, height, width)` for image datasets; first axis is
    /// always the sample axis.
    pub x: ArrayD<f32>,
    pub y: Vec<u8>,
    pub num_classes: usize,
}

impl LabeledData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of samples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.y {
            counts[y as usize] += 1;
        }
        counts
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Dataset root: `$DFKD_DATA_DIR` if set, else `./data`.
pub fn default_root() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("data"),
    }
}

/// Load a split from [`default_root`].
pub fn load(name: DatasetName, split: Split) -> Result<LabeledData> {
    load_from(&default_root(), name, split)
}

/// Load a split from an explicit dataset root directory.
pub fn load_from(root: &Path, name: DatasetName, split: Split) -> Result<LabeledData> {
    let spec = DatasetSpec::of(name);
    let data = match name {
        DatasetName::Mnist => load_idx_pair(
            root.join("mnist"),
            split,
            "https://storage.googleapis.com/cvdf-datasets/mnist/",
        )?,
        DatasetName::FashionMnist => load_idx_pair(
            root.join("fashion-mnist"),
            split,
            "https://github.com/zalandoresearch/fashion-mnist (data/fashion)",
        )?,
        DatasetName::Svhn => load_svhn(&root.join("svhn"), split)?,
        DatasetName::Cifar10 => load_cifar(&root.join("cifar-10-batches-bin"), split, false)?,
        DatasetName::Cifar100 => load_cifar(&root.join("cifar-100-binary"), split, true)?,
    };

    let want = match split {
        Split::Train => spec.train_size,
        Split::Test => spec.test_size,
    };
    if data.len() != want {
        return Err(Error::Dataset(format!(
            "{name} {} split has {} samples, expected {want}",
            split.as_str(),
            data.len()
        )));
    }
    let shape = data.x.shape();
    if shape[1..] != spec.input_shape {
        return Err(Error::Dataset(format!(
            "{name} sample shape {:?} does not match expected {:?}",
            &shape[1..],
            spec.input_shape
        )));
    }
    for (i, &y) in data.y.iter().enumerate() {
        if (y as usize) >= spec.num_classes {
            return Err(Error::Dataset(format!(
                "{name} label {y} at index {i} is outside 0..{}",
                spec.num_classes
            )));
        }
    }
    Ok(LabeledData {
        num_classes: spec.num_classes,
        ..data
    })
}

fn read_file(path: &Path, hint: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Dataset(format!(
                "missing dataset file {}: downloads are not automatic; fetch it from {hint} \
                 and place it at that path (set {DATA_DIR_ENV} to relocate the dataset root)",
                path.display()
            ))
        } else {
            Error::io(path, e)
        }
    })
}

fn map_bytes(bytes: Vec<u8>) -> Vec<f32> {
    bytes.into_iter().map(|b| b as f32 / 127.5 - 1.0).collect()
}

// --- IDX (MNIST / Fashion-MNIST) -------------------------------------------

fn be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(Error::Dataset(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes(bytes[off..end].try_into().unwrap()))
}

fn gunzip(path: &Path, hint: &str) -> Result<Vec<u8>> {
    let raw = read_file(path, hint)?;
    let mut out = Vec::new();
    flate2::read::GzDecoder::new(raw.as_slice())
        .read_to_end(&mut out)
        .map_err(|e| Error::Dataset(format!("{}: gzip: {e}", path.display())))?;
    Ok(out)
}

/// Parse a gzipped IDX3 image file into raw bytes plus `(count, rows, cols)`.
fn load_idx_images(path: &Path, hint: &str) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = gunzip(path, hint)?;
    if be_u32(&bytes, 0, path)? != 2051 {
        return Err(Error::Dataset(format!(
            "{}: not an IDX3 image file (bad magic)",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {want} for {n} images of {rows}x{cols}",
            path.display(),
            bytes.len()
        )));
    }
    Ok((bytes[16..].to_vec(), n, rows, cols))
}

/// Parse a gzipped IDX1 label file.
fn load_idx_labels(path: &Path, hint: &str) -> Result<Vec<u8>> {
    let bytes = gunzip(path, hint)?;
    if be_u32(&bytes, 0, path)? != 2049 {
        return Err(Error::Dataset(format!(
            "{}: not an IDX1 label file (bad magic)",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {} for {n} labels",
            path.display(),
            bytes.len(),
            8 + n
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Load one split of an IDX-format dataset, zero-padding 28x28 images to
/// 32x32 (padding bytes are 0, i.e. -1 after normalization — background).
fn load_idx_pair(dir: PathBuf, split: Split, hint: &str) -> Result<LabeledData> {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let (pixels, n, rows, cols) =
        load_idx_images(&dir.join(format!("{stem}-images-idx3-ubyte.gz")), hint)?;
    let y = load_idx_labels(&dir.join(format!("{stem}-labels-idx1-ubyte.gz")), hint)?;
    if y.len() != n {
        return Err(Error::Dataset(format!(
            "{}: {n} images but {} labels",
            dir.display(),
            y.len()
        )));
    }

    let (side, pad) = match (rows, cols) {
        (28, 28) => (32usize, 2usize),
        (32, 32) => (32, 0),
        _ => {
            return Err(Error::Dataset(format!(
                "{}: unsupported image size {rows}x{cols}",
                dir.display()
            )))
        }
    };
    let mut x = ArrayD::zeros(IxDyn(&[n, 1, side, side]));
    x.fill(PIXEL_RANGE.0);
    let norm = map_bytes(pixels);
    for i in 0..n {
        for r in 0..rows {
            let src = i * rows * cols + r * cols;
            for c in 0..cols {
                x[[i, 0, r + pad, c + pad]] = norm[src + c];
            }
        }
    }
    Ok(LabeledData {
        x,
        y,
        num_classes: 10,
    })
}

// --- CIFAR binary ------------------------------------------------------------

/// Parse one CIFAR binary batch file. Records are `[coarse?][fine][3072
/// pixels]`, pixels plane-major (all red, all green, all blue), row-major
/// within a plane — exactly the `(3, 32, 32)` layout we store.
fn parse_cifar_file(
    path: &Path,
    expect_records: usize,
    has_coarse_label: bool,
    hint: &str,
) -> Result<(Vec<f32>, Vec<u8>)> {
    let bytes = read_file(path, hint)?;
    let rec = if has_coarse_label { 2 + 3072 } else { 1 + 3072 };
    if bytes.len() != expect_records * rec {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {} for {expect_records} records of {rec} bytes",
            path.display(),
            bytes.len(),
            expect_records * rec
        )));
    }
    let mut pixels = Vec::with_capacity(expect_records * 3072);
    let mut labels = Vec::with_capacity(expect_records);
    for chunk in bytes.chunks_exact(rec) {
        // CIFAR-100 stores a coarse label first; we train on the fine one.
        labels.push(chunk[rec - 3073]);
        pixels.extend(chunk[rec - 3072..].iter().map(|&b| b as f32 / 127.5 - 1.0));
    }
    Ok((pixels, labels))
}

fn load_cifar(dir: &Path, split: Split, is_cifar100: bool) -> Result<LabeledData> {
    let hint = if is_cifar100 {
        "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz (extract the .bin files)"
    } else {
        "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz (extract the .bin files)"
    };
    let files: Vec<(PathBuf, usize)> = match (is_cifar100, split) {
        (false, Split::Train) => (1..=5)
            .map(|i| (dir.join(format!("data_batch_{i}.bin")), 10_000))
            .collect(),
        (false, Split::Test) => vec![(dir.join("test_batch.bin"), 10_000)],
        (true, Split::Train) => vec![(dir.join("train.bin"), 50_000)],
        (true, Split::Test) => vec![(dir.join("test.bin"), 10_000)],
    };

    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (path, records) in &files {
        let (p, l) = parse_cifar_file(path, *records, is_cifar100, hint)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    let x = ArrayD::from_shape_vec(IxDyn(&[n, 3, 32, 32]), pixels)
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    Ok(LabeledData {
        x,
        y: labels,
        num_classes: if is_cifar100 { 100 } else { 10 },
    })
}

// --- SVHN (MATLAB level-5 container) ----------------------------------------

/// Minimal reader for the subset of the MATLAB level-5 file format that the
/// published SVHN cropped-digit archives use: a little-endian container whose
/// variables are numeric arrays, possibly wrapped in zlib-compressed elements.
mod mat5 {
    use super::*;

    pub const MI_INT8: u32 = 1;
    pub const MI_UINT8: u32 = 2;
    pub const MI_INT16: u32 = 3;
    pub const MI_UINT16: u32 = 4;
    pub const MI_INT32: u32 = 5;
    pub const MI_UINT32: u32 = 6;
    pub const MI_SINGLE: u32 = 7;
    pub const MI_DOUBLE: u32 = 9;
    pub const MI_MATRIX: u32 = 14;
    pub const MI_COMPRESSED: u32 = 15;

    /// A numeric variable: dimensions plus flat column-major data.
    pub struct MatArray {
        pub dims: Vec<usize>,
        pub data: MatData,
    }

    pub enum MatData {
        U8(Vec<u8>),
        F64(Vec<f64>),
    }

    impl MatArray {
        pub fn len(&self) -> usize {
            match &self.data {
                MatData::U8(v) => v.len(),
                MatData::F64(v) => v.len(),
            }
        }

        /// Element as f64 regardless of storage type.
        pub fn get(&self, i: usize) -> f64 {
            match &self.data {
                MatData::U8(v) => v[i] as f64,
                MatData::F64(v) => v[i],
            }
        }
    }

    fn bad(path: &Path, what: &str) -> Error {
        Error::Dataset(format!("{}: {what}", path.display()))
    }

    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
        path: &'a Path,
    }

    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self.pos + n;
            if end > self.bytes.len() {
                return Err(bad(self.path, "truncated element"));
            }
            let s = &self.bytes[self.pos..end];
            self.pos = end;
            Ok(s)
        }

        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }

        /// Read one data-element header and its payload, honoring both the
        /// regular `[type u32][size u32]` form and the packed small-element
        /// form, plus the 8-byte padding rule.
        fn element(&mut self) -> Result<(u32, &'a [u8])> {
            let first = self.u32()?;
            if first >> 16 != 0 {
                // Small element: size and type share the first word.
                let ty = first & 0xFFFF;
                let size = (first >> 16) as usize;
                if size > 4 {
                    return Err(bad(self.path, "small element longer than 4 bytes"));
                }
                let payload = &self.take(4)?[..size];
                return Ok((ty, payload));
            }
            let size = self.u32()? as usize;
            let payload = self.take(size)?;
            // Payloads pad to the next 8-byte boundary (compressed elements
            // are exempt, but skipping padding at EOF is harmless anyway).
            let rem = size % 8;
            if rem != 0 {
                let pad = (8 - rem).min(self.bytes.len() - self.pos);
                self.pos += pad;
            }
            Ok((first, payload))
        }

        fn done(&self) -> bool {
            self.pos >= self.bytes.len()
        }
    }

    fn numeric(ty: u32, payload: &[u8], path: &Path) -> Result<MatData> {
        let f64s = |width: usize, f: &dyn Fn(&[u8]) -> f64| -> Result<Vec<f64>> {
            if payload.len() % width != 0 {
                return Err(bad(path, "numeric payload not a multiple of its width"));
            }
            Ok(payload.chunks_exact(width).map(f).collect())
        };
        match ty {
            MI_UINT8 => Ok(MatData::U8(payload.to_vec())),
            MI_INT8 => Ok(MatData::F64(f64s(1, &|b| b[0] as i8 as f64)?)),
            MI_INT16 => Ok(MatData::F64(f64s(2, &|b| {
                i16::from_le_bytes(b.try_into().unwrap()) as f64
            })?)),
            MI_UINT16 => Ok(MatData::F64(f64s(2, &|b| {
                u16::from_le_bytes(b.try_into().unwrap()) as f64
            })?)),
            MI_INT32 => Ok(MatData::F64(f64s(4, &|b| {
                i32::from_le_bytes(b.try_into().unwrap()) as f64
            })?)),
            MI_UINT32 => Ok(MatData::F64(f64s(4, &|b| {
                u32::from_le_bytes(b.try_into().unwrap()) as f64
            })?)),
            MI_SINGLE => Ok(MatData::F64(f64s(4, &|b| {
                f32::from_le_bytes(b.try_into().unwrap()) as f64
            })?)),
            MI_DOUBLE => Ok(MatData::F64(f64s(8, &|b| {
                f64::from_le_bytes(b.try_into().unwrap())
            })?)),
            other => Err(bad(path, &format!("unsupported numeric type {other}"))),
        }
    }

    /// Parse one miMATRIX payload into its name and numeric contents.
    fn matrix(payload: &[u8], path: &Path) -> Result<(String, MatArray)> {
        let mut c = Cursor {
            bytes: payload,
            pos: 0,
            path,
        };
        let (_, _flags) = c.element()?; // array flags: class/complexity, unused
        let (dty, draw) = c.element()?;
        if dty != MI_INT32 {
            return Err(bad(path, "dimensions element is not int32"));
        }
        let dims: Vec<usize> = draw
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let (nty, nraw) = c.element()?;
        if nty != MI_INT8 {
            return Err(bad(path, "array name element is not int8"));
        }
        let name = String::from_utf8_lossy(nraw).into_owned();
        let (vty, vraw) = c.element()?;
        let data = numeric(vty, vraw, path)?;
        let arr = MatArray { dims, data };
        if arr.len() != arr.dims.iter().product::<usize>() {
            return Err(bad(path, &format!("variable '{name}' data/dims mismatch")));
        }
        Ok((name, arr))
    }

    /// Read every numeric variable in the file.
    pub fn read(path: &Path, hint: &str) -> Result<BTreeMap<String, MatArray>> {
        let bytes = read_file(path, hint)?;
        if bytes.len() < 128 {
            return Err(bad(path, "shorter than the 128-byte header"));
        }
        if &bytes[126..128] != b"IM" {
            return Err(bad(path, "not a little-endian MATLAB level-5 file"));
        }
        let mut vars = BTreeMap::new();
        let mut c = Cursor {
            bytes: &bytes[128..],
            pos: 0,
            path,
        };
        while !c.done() {
            let (ty, payload) = c.element()?;
            match ty {
                MI_COMPRESSED => {
                    let mut inflated = Vec::new();
                    flate2::read::ZlibDecoder::new(payload)
                        .read_to_end(&mut inflated)
                        .map_err(|e| bad(path, &format!("zlib: {e}")))?;
                    let mut inner = Cursor {
                        bytes: &inflated,
                        pos: 0,
                        path,
                    };
                    let (ity, ipayload) = inner.element()?;
                    if ity != MI_MATRIX {
                        return Err(bad(path, "compressed element is not a matrix"));
                    }
                    let (name, arr) = matrix(ipayload, path)?;
                    vars.insert(name, arr);
                }
                MI_MATRIX => {
                    let (name, arr) = matrix(payload, path)?;
                    vars.insert(name, arr);
                }
                other => return Err(bad(path, &format!("unsupported element type {other}"))),
            }
        }
        Ok(vars)
    }
}

/// Reorder SVHN's column-major `(32, 32, 3, n)` images into `(n, 3, 32, 32)`
/// and remap labels 1..=10 to 0..=9 (the archives store digit 0 as 10).
fn convert_svhn(x: &mat5::MatArray, y: &mat5::MatArray, path: &Path) -> Result<LabeledData> {
    if x.dims.len() != 4 || x.dims[0] != 32 || x.dims[1] != 32 || x.dims[2] != 3 {
        return Err(Error::Dataset(format!(
            "{}: variable 'X' has dims {:?}, expected [32, 32, 3, n]",
            path.display(),
            x.dims
        )));
    }
    let n = x.dims[3];
    if y.len() != n {
        return Err(Error::Dataset(format!(
            "{}: {n} images but {} labels",
            path.display(),
            y.len()
        )));
    }
    let mut pixels = vec![0f32; n * 3 * 32 * 32];
    for s in 0..n {
        for c in 0..3 {
            for i in 0..32 {
                for j in 0..32 {
                    // Column-major source index over (i, j, c, s).
                    let src = i + 32 * (j + 32 * (c + 3 * s));
                    pixels[((s * 3 + c) * 32 + i) * 32 + j] = x.get(src) as f32 / 127.5 - 1.0;
                }
            }
        }
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let v = y.get(i);
        if !(1.0..=10.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::Dataset(format!(
                "{}: label {v} at index {i} is outside 1..=10",
                path.display()
            )));
        }
        labels.push(if v == 10.0 { 0 } else { v as u8 });
    }
    Ok(LabeledData {
        x: ArrayD::from_shape_vec(IxDyn(&[n, 3, 32, 32]), pixels)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?,
        y: labels,
        num_classes: 10,
    })
}

fn load_svhn(dir: &Path, split: Split) -> Result<LabeledData> {
    let hint = "http://ufldl.stanford.edu/housenumbers/ (cropped digits, *_32x32.mat)";
    let path = dir.join(match split {
        Split::Train => "train_32x32.mat",
        Split::Test => "test_32x32.mat",
    });
    let vars = mat5::read(&path, hint)?;
    let x = vars
        .get("X")
        .ok_or_else(|| Error::Dataset(format!("{}: no variable 'X'", path.display())))?;
    let y = vars
        .get("y")
        .ok_or_else(|| Error::Dataset(format!("{}: no variable 'y'", path.display())))?;
    convert_svhn(x, y, &path)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Top-1 accuracy plus per-class recall. Recalls weighted by class counts
/// average back to the accuracy, so per-class drops are visible without
/// losing the headline number.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f32,
    pub per_class_recall: Vec<f32>,
    pub per_class_count: Vec<usize>,
}

impl Evaluation {
    /// Smallest per-class recall among classes that actually appear.
    pub fn min_recall(&self) -> f32 {
        self.per_class_recall
            .iter()
            .zip(&self.per_class_count)
            .filter(|(_, &n)| n > 0)
            .map(|(&r, _)| r)
            .fold(f32::INFINITY, f32::min)
    }
}

/// Evaluate a classifier on labeled data with running statistics.
pub fn evaluate(model: &ModelHandle, data: &LabeledData, batch_size: usize) -> Result<Evaluation> {
    let c = model.arch_params().num_classes;
    if c != data.num_classes {
        return Err(Error::Invalid(format!(
            "model predicts {c} classes but the dataset has {}",
            data.num_classes
        )));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::Invalid("cannot evaluate on an empty set".into()));
    }
    if data.x.shape()[0] != n {
        return Err(Error::Invalid(format!(
            "{} images but {n} labels",
            data.x.shape()[0]
        )));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("evaluation batch size must be > 0".into()));
    }

    let mut correct = vec![0usize; c];
    let mut count = vec![0usize; c];
    let mut lo = 0;
    while lo < n {
        let hi = (lo + batch_size).min(n);
        let xs = data.x.slice_axis(Axis(0), ndarray::Slice::from(lo..hi));
        let (logits, _) = model.forward_eval(&xs.to_owned(), false);
        let logits = logits
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Invalid(format!("classifier output is not 2-d: {e}")))?;
        for (row, &y) in logits.outer_iter().zip(&data.y[lo..hi]) {
            // First maximum wins ties, the usual argmax convention.
            let mut pred = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[pred] {
                    pred = i;
                }
            }
            count[y as usize] += 1;
            if pred == y as usize {
                correct[y as usize] += 1;
            }
        }
        lo = hi;
    }

    let per_class_recall = correct
        .iter()
        .zip(&count)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f32 / n as f32 })
        .collect();
    Ok(Evaluation {
        accuracy: correct.iter().sum::<usize>() as f32 / n as f32,
        per_class_recall,
        per_class_count: count,
    })
}

/// Accuracy probe over a dataset's test split, for use inside distillation.
pub struct DatasetProbe {
    data: LabeledData,
    batch_size: usize,
}

impl DatasetProbe {
    pub fn new(root: &Path, name: DatasetName) -> Result<Self> {
        Ok(Self {
            data: load_from(root, name, Split::Test)?,
            batch_size: 512,
        })
    }

    /// Probe over an already-loaded set (the toy problem uses this).
    pub fn over(data: LabeledData, batch_size: usize) -> Self {
        Self { data, batch_size }
    }

    pub fn evaluate(&self, model: &ModelHandle) -> Result<Evaluation> {
        evaluate(model, &self.data, self.batch_size)
    }
}

impl Probe for DatasetProbe {
    fn accuracy(&mut self, student: &ModelHandle) -> Result<f32> {
        Ok(self.evaluate(student)?.accuracy)
    }
}

// ---------------------------------------------------------------------------
// Teacher pre-training
// ---------------------------------------------------------------------------

/// Mean cross-entropy of softmax probabilities against integer labels.
/// Gradient w.r.t. the logits is `(softmax - one_hot) / n`.
pub(crate) fn node_cross_entropy(g: &mut Graph, logits: NodeId, labels: &[u8]) -> NodeId {
    let p = act::softmax_fwd(g.value(logits))
        .into_dimensionality::<Ix2>()
        .expect("logits are 2-d");
    let n = labels.len();
    assert_eq!(p.nrows(), n, "logit rows must match label count");
    let mut value = 0f64;
    let mut grad = p.clone();
    for (i, &y) in labels.iter().enumerate() {
        value -= (f64::from(p[[i, y as usize]]).max(1e-12)).ln();
        grad[[i, y as usize]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f32);
    let requires = g.requires_grad(logits);
    g.push(
        nnet::ops::scalar((value / n as f64) as f32),
        requires,
        requires.then(|| -> nnet::BackwardFn {
            Box::new(move |gy, store| {
                let f = gy[IxDyn(&[])];
                if store.needs(logits) {
                    store.accumulate(logits, grad.mapv(|v| v * f).into_dyn());
                }
            })
        }),
    )
}

/// Supervised training settings for one dataset family.
#[derive(Debug, Clone)]
pub struct TeacherRecipe {
    pub optimizer: &'static str,
    pub lr: f32,
    pub epochs: u64,
    pub batch_size: usize,
    /// Epochs at whose start the learning rate is multiplied by `decay`.
    pub decay_at: Vec<u64>,
    pub decay: f32,
}

impl fmt::Display for TeacherRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} lr {} for {} epochs, batch {}, x{} at epochs {:?}",
            self.optimizer, self.lr, self.epochs, self.batch_size, self.decay, self.decay_at
        )
    }
}

/// Committed recipe per dataset. The 28x28 sets train in minutes on a CPU;
/// the 32x32 color sets are sized for GPU-hours and ship untrained.
pub fn recipe_for(name: DatasetName) -> TeacherRecipe {
    match name {
        DatasetName::Mnist | DatasetName::FashionMnist => TeacherRecipe {
            optimizer: "adam",
            lr: 1e-3,
            epochs: 10,
            batch_size: 128,
            decay_at: vec![8],
            decay: 0.1,
        },
        DatasetName::Svhn | DatasetName::Cifar10 | DatasetName::Cifar100 => TeacherRecipe {
            optimizer: "sgd",
            lr: 0.1,
            epochs: 80,
            batch_size: 128,
            decay_at: vec![40, 60],
            decay: 0.1,
        },
    }
}

fn gather(data: &LabeledData, idx: &[usize]) -> (ArrayD<f32>, Vec<u8>) {
    let x = data.x.select(Axis(0), idx);
    let y = idx.iter().map(|&i| data.y[i]).collect();
    (x, y)
}

/// One optimizer step on a labeled minibatch; returns the batch loss.
pub(crate) fn supervised_step(
    model: &mut ModelHandle,
    optim: &mut Optim,
    x: ArrayD<f32>,
    y: &[u8],
) -> Result<f32> {
    let mut g = Graph::new();
    let xn = g.constant(x);
    let (logits, _) = model.forward(&mut g, xn, Mode::Train)?;
    let loss = node_cross_entropy(&mut g, logits, y);
    let value = nnet::ops::to_scalar(g.value(loss));
    model.zero_grads();
    model.absorb_grads(g, loss);
    model.optim_step(optim);
    Ok(value)
}

/// Train a classifier on a labeled dataset and save it as a teacher
/// checkpoint (with its recipe and measured accuracy in the header).
/// Returns the final test accuracy.
pub fn train_teacher(
    root: &Path,
    name: DatasetName,
    arch_id: &str,
    seed: u64,
    out: &Path,
) -> Result<f32> {
    let spec = DatasetSpec::of(name);
    let train = load_from(root, name, Split::Train)?;
    let test = load_from(root, name, Split::Test)?;
    let recipe = recipe_for(name);
    println!(
        "[teacher] {name} -> {arch_id}: {} train / {} test samples, {recipe}",
        train.len(),
        test.len()
    );

    let mut model = models::build(arch_id, Role::Teacher, seed, &spec.arch_params())?;
    let mut optim = match recipe.optimizer {
        "adam" => Optim::Adam(nnet::Adam::new(recipe.lr)),
        _ => Optim::Sgd(nnet::Sgd::new(recipe.lr, 0.9)),
    };
    let mut rng = stream(seed, StreamId::DataShuffle);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut lr = recipe.lr;
    let mut accuracy = 0.0;

    for epoch in 1..=recipe.epochs {
        if recipe.decay_at.contains(&epoch) {
            lr *= recipe.decay;
            optim.set_lr(lr);
        }
        indices.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut batches = 0u64;
        for chunk in indices.chunks(recipe.batch_size) {
            let (x, y) = gather(&train, chunk);
            loss_sum += f64::from(supervised_step(&mut model, &mut optim, x, &y)?);
            batches += 1;
        }
        accuracy = evaluate(&model, &test, 512)?.accuracy;
        println!(
            "[teacher] epoch {epoch}/{}: loss {:.4}, test accuracy {:.4}",
            recipe.epochs,
            loss_sum / batches as f64,
            accuracy
        );
    }

    let mut extra = BTreeMap::new();
    extra.insert("dataset".into(), name.to_string());
    extra.insert("normalization".into(), "pixels scaled to [-1, 1]".into());
    extra.insert("recipe".into(), format!("{recipe}, seed {seed}"));
    extra.insert("test_accuracy".into(), format!("{accuracy}"));
    persist::save_model(out, &model, None, extra)?;
    println!(
        "[teacher] saved {} ({} parameters, accuracy {accuracy:.4})",
        out.display(),
        model.param_count()
    );
    Ok(accuracy)
}

/// Build a class-balanced subset (n per class) for quick balanced probes.
pub fn balanced_subset(data: &LabeledData, per_class: usize, seed: u64) -> Result<LabeledData> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.y.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let mut rng = stream(seed, StreamId::DataShuffle);
    let mut picked = Vec::with_capacity(per_class * data.num_classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Invalid(format!(
                "class {c} has only {} samples, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..per_class]);
    }
    let (x, y) = gather(data, &picked);
    Ok(LabeledData {
        x,
        y,
        num_classes: data.num_classes,
    })
}

/// Class share vector (counts / total) — handy for sanity checks.
pub fn class_shares(data: &LabeledData) -> Array1<f32> {
    let counts = data.class_counts();
    let n = data.len() as f32;
    Array1::from_iter(counts.into_iter().map(|c| c as f32 / n))
}
