//! Core value types: probability/logit batches, latent and synthetic batches,
//! loss weights, and the discrepancy selector.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayD, ArrayView2};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Row-wise softmax, generic over float width so gradient checks can run in
/// f64 while training runs in f32. Rows keep their argmax and sum to 1.
pub fn softmax<T: Float>(logits: ArrayView2<T>) -> Array2<T> {
    let (n, c) = logits.dim();
    let mut out = Array2::<T>::zeros((n, c));
    for i in 0..n {
        let row = logits.row(i);
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for j in 0..c {
            let e = (row[j] - m).exp();
            out[[i, j]] = e;
            z = z + e;
        }
        for j in 0..c {
            out[[i, j]] = out[[i, j]] / z;
        }
    }
    out
}

/// Per-sample class probabilities: (n, C), rows on the simplex.
#[derive(Debug, Clone)]
pub struct ProbBatch {
    values: Array2<f32>,
}

impl ProbBatch {
    /// Validate entries in [0,1] and row sums within 1e-5 of 1.
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Invalid("probability batch is empty".into()));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let mut sum = 0.0f32;
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!(
                        "probability out of range at row {i}: {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::Invalid(format!(
                    "probability row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn from_logits(logits: &LogitBatch) -> Self {
        Self {
            values: softmax(logits.values().view()),
        }
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-sample raw (pre-softmax) scores: (n, C), finite.
#[derive(Debug, Clone)]
pub struct LogitBatch {
    values: Array2<f32>,
}

impl LogitBatch {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("logit batch contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Accept a dynamic-rank (n, C) tensor straight from a network forward.
    pub fn from_dyn(values: ArrayD<f32>) -> Result<Self> {
        let values = values
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::Invalid("logits must be a 2-d (n, classes) tensor".into()))?;
        Self::new(values)
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }
}

/// Per-sample argmax class indices.
#[derive(Debug, Clone)]
pub struct HardLabelBatch {
    pub labels: Vec<usize>,
}

impl HardLabelBatch {
    pub fn from_probs(probs: &ProbBatch) -> Self {
        let labels = probs
            .values()
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap()
            })
            .collect();
        Self { labels }
    }
}

/// A batch of latent vectors, reproducible from its seed.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub seed: u64,
    pub z: Array2<f32>,
}

impl LatentBatch {
    /// Sample z ~ N(0, 1) of shape (b, latent_dim), fully determined by `seed`.
    pub fn sample(seed: u64, b: usize, latent_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..b * latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            seed,
            z: Array2::from_shape_vec((b, latent_dim), data).unwrap(),
        }
    }
}

/// Where a synthetic batch came from when it reaches the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchOrigin {
    Fresh,
    Memory,
}

/// Generator output pixels (or toy points) with provenance.
#[derive(Debug, Clone)]
pub struct SyntheticBatch {
    /// (B, channels, H, W) for image domains, (B, 2) for the toy domain —
    /// always the teacher's expected input shape.
    pub images: ArrayD<f32>,
    pub origin: BatchOrigin,
    pub created_at_epoch: u64,
}

impl SyntheticBatch {
    pub fn new(images: ArrayD<f32>, origin: BatchOrigin, created_at_epoch: u64) -> Result<Self> {
        if !images.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(
                "synthetic batch contains non-finite values".into(),
            ));
        }
        Ok(Self {
            images,
            origin,
            created_at_epoch,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.images.shape()[0]
    }
}

/// Coefficients of the generator's activation and entropy terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GenLossWeights {
    pub alpha: f32,
    pub beta: f32,
}

impl GenLossWeights {
    pub fn new(alpha: f32, beta: f32) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Which distance the generator maximizes between teacher and student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyKind {
    #[default]
    Js,
    L1,
    Kld,
}

impl std::str::FromStr for DiscrepancyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "js" => Ok(Self::Js),
            "l1" => Ok(Self::L1),
            "kld" => Ok(Self::Kld),
            other => Err(Error::Config(format!(
                "unknown discrepancy kind '{other}' (expected js, l1, or kld)"
            ))),
        }
    }
}

impl std::fmt::Display for DiscrepancyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Js => "js",
            Self::L1 => "l1",
            Self::Kld => "kld",
        })
    }
}

/// Which network responses the student's imitation loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdResponseKind {
    #[default]
    Logits,
    Probs,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn softmax_symmetry_and_known_values() {
        let p = softmax(arr2(&[[0.0f64, 0.0]]).view());
        assert_abs_diff_eq!(p[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 0.5, epsilon = 1e-12);

        let p = softmax(arr2(&[[1.0f64.ln(), 9.0f64.ln()]]).view());
        assert_abs_diff_eq!(p[[0, 0]], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_preserves_rows() {
        let base = arr2(&[[0.3f64, -1.2, 2.0], [5.0, 5.0, -5.0]]);
        let shifted = &base + 7.5;
        let a = softmax(base.view());
        let b = softmax(shifted.view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn prob_batch_rejects_bad_rows() {
        assert!(ProbBatch::new(arr2(&[[0.5f32, 0.6]])).is_err());
        assert!(ProbBatch::new(arr2(&[[1.2f32, -0.2]])).is_err());
        assert!(ProbBatch::new(arr2(&[[0.25f32, 0.75]])).is_ok());
    }

    #[test]
    fn hard_labels_take_argmax() {
        let p = ProbBatch::new(arr2(&[[0.1f32, 0.9], [0.8, 0.2]])).unwrap();
        let h = HardLabelBatch::from_probs(&p);
        assert_eq!(h.labels, vec![1, 0]);
    }

    #[test]
    fn latent_batches_reproduce_from_seed() {
        let a = LatentBatch::sample(42, 4, 8);
        let b = LatentBatch::sample(42, 4, 8);
        let c = LatentBatch::sample(43, 4, 8);
        assert_eq!(a.z, b.z);
        assert!(a.z.iter().zip(c.z.iter()).any(|(x, y)| x != y));
    }
}
