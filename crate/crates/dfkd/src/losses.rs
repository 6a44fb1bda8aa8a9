//! Generator and student objectives.
//!
//! The generator objective rewards synthetic batches that the teacher labels
//! confidently (one-hot term), that excite the teacher's features (activation
//! term), that cover all classes evenly (information-entropy term), and that
//! the student currently disagrees with (discrepancy term, negated so that
//! minimizing it maximizes disagreement).  The student objective is a plain
//! mean absolute error between teacher and student responses.
//!
//! All logarithms are natural except the Jensen-Shannon divergence, which is
//! base-2 so its value lands in [0, 1].  Every log carries a `1e-8` epsilon;
//! that epsilon can push a value past its ideal bound by ~1e-8, so final
//! values are clamped back into the documented range.
//!
//! [`kernels`] holds the numeric cores, generic over the float type so tests
//! can finite-difference them in `f64`; the `node_*` functions wrap the same
//! kernels as autodiff graph nodes for training.

use crate::error::{Error, Result};
use crate::types::{DiscrepancyKind, GenLossWeights, KdResponseKind, LogitBatch, ProbBatch};
use ndarray::{Array1, Array2, ArrayView2, Ix2};
use nnet::{Graph, NodeId};

/// Numeric cores of every loss, generic over the float type.
///
/// Each `*_grad` returns the exact derivative of its companion value function
/// (epsilon included), so finite-difference checks agree to first order.
pub mod kernels {
    use super::DiscrepancyKind;
    use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
    use num_traits::Float;

    fn eps<T: Float>() -> T {
        T::from(1e-8).unwrap()
    }

    /// Mean negative log of each row's largest probability, clamped at zero.
    pub fn one_hot<T: Float>(p: ArrayView2<T>) -> T {
        let n = T::from(p.nrows()).unwrap();
        let mut total = T::zero();
        for row in p.rows() {
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            total = total - (m + eps()).ln();
        }
        (total / n).max(T::zero())
    }

    /// Gradient of [`one_hot`]: nonzero only at each row's argmax.
    pub fn one_hot_grad<T: Float>(p: ArrayView2<T>) -> Array2<T> {
        let n = T::from(p.nrows()).unwrap();
        let mut g = Array2::zeros(p.raw_dim());
        for (i, row) in p.rows().into_iter().enumerate() {
            let (j, m) = row
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            g[[i, j]] = -(T::one() / (n * (m + eps())));
        }
        g
    }

    /// Negated batch mean of the per-sample L1 norm over all feature taps.
    pub fn activation<T: Float>(taps: &[ArrayView2<T>]) -> T {
        let n = T::from(taps[0].nrows()).unwrap();
        let mut total = T::zero();
        for t in taps {
            for &v in t.iter() {
                total = total + v.abs();
            }
        }
        -(total / n)
    }

    /// Gradients of [`activation`], one per tap: `-sign(x) / n`.
    pub fn activation_grad<T: Float>(taps: &[ArrayView2<T>]) -> Vec<Array2<T>> {
        let n = T::from(taps[0].nrows()).unwrap();
        taps.iter()
            .map(|t| t.mapv(|v| -v.signum() / n))
            .collect()
    }

    /// Per-class frequency: column means of a probability batch.
    pub fn class_frequency<T: Float>(p: ArrayView2<T>) -> Array1<T> {
        let n = T::from(p.nrows()).unwrap();
        p.sum_axis(Axis(0)).mapv(|v| v / n)
    }

    /// Negated Shannon entropy of a frequency vector, clamped at zero above.
    pub fn info_entropy<T: Float>(freq: ArrayView1<T>) -> T {
        let mut total = T::zero();
        for &f in freq.iter() {
            total = total + f * (f + eps()).ln();
        }
        total.min(T::zero())
    }

    /// Gradient of [`info_entropy`] with respect to the frequencies.
    pub fn info_entropy_grad<T: Float>(freq: ArrayView1<T>) -> Array1<T> {
        freq.mapv(|f| (f + eps()).ln() + f / (f + eps()))
    }

    /// [`info_entropy`] of the batch class frequency of `p`.
    pub fn info_entropy_of_probs<T: Float>(p: ArrayView2<T>) -> T {
        info_entropy(class_frequency(p).view())
    }

    /// Gradient of [`info_entropy_of_probs`]: the frequency gradient spread
    /// uniformly over the rows that were averaged.
    pub fn info_entropy_of_probs_grad<T: Float>(p: ArrayView2<T>) -> Array2<T> {
        let n = T::from(p.nrows()).unwrap();
        let gf = info_entropy_grad(class_frequency(p).view());
        let mut g = Array2::zeros(p.raw_dim());
        for mut row in g.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gf[j] / n;
            }
        }
        g
    }

    /// Batch-mean Jensen-Shannon divergence in base 2, clamped into [0, 1].
    pub fn js<T: Float>(p: ArrayView2<T>, q: ArrayView2<T>) -> T {
        let n = T::from(p.nrows()).unwrap();
        let ln2 = T::from(2.0).unwrap().ln();
        let half = T::from(0.5).unwrap();
        let mut total = T::zero();
        for (rp, rq) in p.rows().into_iter().zip(q.rows()) {
            for (&a, &b) in rp.iter().zip(rq.iter()) {
                let m = half * (a + b);
                total = total
                    + half * (a * ((a + eps()) / (m + eps())).ln() + b * ((b + eps()) / (m + eps())).ln());
            }
        }
        (total / (n * ln2)).max(T::zero()).min(T::one())
    }

    /// Gradients of [`js`] with respect to both arguments.
    pub fn js_grad<T: Float>(p: ArrayView2<T>, q: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
        let n = T::from(p.nrows()).unwrap();
        let ln2 = T::from(2.0).unwrap().ln();
        let half = T::from(0.5).unwrap();
        let scale = half / (n * ln2);
        let mut gp = Array2::zeros(p.raw_dim());
        let mut gq = Array2::zeros(q.raw_dim());
        for ((idx, &a), &b) in p.indexed_iter().zip(q.iter()) {
            let m = half * (a + b);
            // d/da [ a ln((a+e)/(m+e)) + b ln((b+e)/(m+e)) ] with m = (a+b)/2
            gp[idx] = scale * (((a + eps()) / (m + eps())).ln() + a / (a + eps()) - m / (m + eps()));
            gq[idx] = scale * (((b + eps()) / (m + eps())).ln() + b / (b + eps()) - m / (m + eps()));
        }
        (gp, gq)
    }

    /// Mean absolute difference over all elements.
    pub fn l1_mean<T: Float>(a: ArrayView2<T>, b: ArrayView2<T>) -> T {
        let len = T::from(a.len()).unwrap();
        let mut total = T::zero();
        for (&x, &y) in a.iter().zip(b.iter()) {
            total = total + (x - y).abs();
        }
        total / len
    }

    /// Gradients of [`l1_mean`] with respect to both arguments.
    pub fn l1_mean_grad<T: Float>(a: ArrayView2<T>, b: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
        let len = T::from(a.len()).unwrap();
        let mut ga = Array2::zeros(a.raw_dim());
        let mut gb = Array2::zeros(b.raw_dim());
        for ((idx, &x), &y) in a.indexed_iter().zip(b.iter()) {
            let s = (x - y).signum() / len;
            ga[idx] = s;
            gb[idx] = -s;
        }
        (ga, gb)
    }

    /// Batch-mean KL divergence `KL(p || q)` in nats.
    pub fn kld<T: Float>(p: ArrayView2<T>, q: ArrayView2<T>) -> T {
        let n = T::from(p.nrows()).unwrap();
        let mut total = T::zero();
        for (&a, &b) in p.iter().zip(q.iter()) {
            total = total + a * ((a + eps()) / (b + eps())).ln();
        }
        total / n
    }

    /// Gradients of [`kld`] with respect to both arguments.
    pub fn kld_grad<T: Float>(p: ArrayView2<T>, q: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
        let n = T::from(p.nrows()).unwrap();
        let mut gp = Array2::zeros(p.raw_dim());
        let mut gq = Array2::zeros(q.raw_dim());
        for ((idx, &a), &b) in p.indexed_iter().zip(q.iter()) {
            gp[idx] = (((a + eps()) / (b + eps())).ln() + a / (a + eps())) / n;
            gq[idx] = -(a / (b + eps())) / n;
        }
        (gp, gq)
    }

    /// Teacher-student discrepancy, oriented so that *minimizing* it pushes
    /// the pair toward *disagreement*.
    pub fn discrepancy<T: Float>(t: ArrayView2<T>, s: ArrayView2<T>, kind: DiscrepancyKind) -> T {
        match kind {
            DiscrepancyKind::Js => T::one() - js(t, s),
            DiscrepancyKind::L1 => -l1_mean(t, s),
            DiscrepancyKind::Kld => -kld(t, s),
        }
    }

    /// Gradient of [`discrepancy`] with respect to the student responses.
    pub fn discrepancy_grad_s<T: Float>(
        t: ArrayView2<T>,
        s: ArrayView2<T>,
        kind: DiscrepancyKind,
    ) -> Array2<T> {
        match kind {
            DiscrepancyKind::Js => js_grad(t, s).1.mapv(|v| -v),
            DiscrepancyKind::L1 => l1_mean_grad(t, s).1.mapv(|v| -v),
            DiscrepancyKind::Kld => kld_grad(t, s).1.mapv(|v| -v),
        }
    }

    /// Gradient of [`discrepancy`] with respect to the teacher responses.
    pub fn discrepancy_grad_t<T: Float>(
        t: ArrayView2<T>,
        s: ArrayView2<T>,
        kind: DiscrepancyKind,
    ) -> Array2<T> {
        match kind {
            DiscrepancyKind::Js => js_grad(t, s).0.mapv(|v| -v),
            DiscrepancyKind::L1 => l1_mean_grad(t, s).0.mapv(|v| -v),
            DiscrepancyKind::Kld => kld_grad(t, s).0.mapv(|v| -v),
        }
    }

    /// Vector-Jacobian product of a row-wise softmax: maps a gradient with
    /// respect to probabilities `p` to one with respect to the logits.
    pub fn softmax_vjp<T: Float>(p: ArrayView2<T>, g: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(p.raw_dim());
        for ((mut orow, prow), grow) in out.rows_mut().into_iter().zip(p.rows()).zip(g.rows()) {
            let dot = prow
                .iter()
                .zip(grow.iter())
                .fold(T::zero(), |acc, (&pv, &gv)| acc + pv * gv);
            for ((o, &pv), &gv) in orow.iter_mut().zip(prow.iter()).zip(grow.iter()) {
                *o = pv * (gv - dot);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Value types
// ---------------------------------------------------------------------------

/// Feature activations captured at named layers, one tensor per tap, each
/// shaped `(batch, features)` with a shared batch dimension.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    tensors: Vec<Array2<f32>>,
    layer_ids: Vec<String>,
}

impl ActivationSet {
    pub fn new(tensors: Vec<Array2<f32>>, layer_ids: Vec<String>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::Invalid("activation set needs at least one tap".into()));
        }
        if tensors.len() != layer_ids.len() {
            return Err(Error::Invalid(format!(
                "{} activation tensors but {} layer ids",
                tensors.len(),
                layer_ids.len()
            )));
        }
        let n = tensors[0].nrows();
        if n == 0 {
            return Err(Error::Invalid("activation set has an empty batch".into()));
        }
        if tensors.iter().any(|t| t.nrows() != n) {
            return Err(Error::Invalid(
                "activation taps disagree on the batch dimension".into(),
            ));
        }
        Ok(Self { tensors, layer_ids })
    }

    pub fn tensors(&self) -> &[Array2<f32>] {
        &self.tensors
    }

    pub fn layer_ids(&self) -> &[String] {
        &self.layer_ids
    }

    pub fn batch_size(&self) -> usize {
        self.tensors[0].nrows()
    }
}

/// Per-class frequency vector: entries in [0, 1] summing to one.
#[derive(Debug, Clone)]
pub struct ClassFrequency {
    values: Array1<f32>,
}

impl ClassFrequency {
    pub fn new(values: Array1<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("class frequency must be non-empty".into()));
        }
        if values.iter().any(|&v| !(-1e-6..=1.0 + 1e-6).contains(&v)) {
            return Err(Error::Invalid("class frequencies must lie in [0, 1]".into()));
        }
        let sum: f32 = values.sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::Invalid(format!(
                "class frequencies sum to {sum}, expected 1"
            )));
        }
        Ok(Self { values })
    }

    /// Column means of a probability batch.
    pub fn from_probs(probs: &ProbBatch) -> Self {
        Self {
            values: kernels::class_frequency(probs.values().view()),
        }
    }

    pub fn values(&self) -> &Array1<f32> {
        &self.values
    }
}

/// A classifier response in either representation, for losses that accept
/// probabilities or raw logits.
#[derive(Debug, Clone, Copy)]
pub enum ResponseBatch<'a> {
    Probs(&'a ProbBatch),
    Logits(&'a LogitBatch),
}

impl<'a> ResponseBatch<'a> {
    fn view(&self) -> ArrayView2<'a, f32> {
        match self {
            ResponseBatch::Probs(p) => p.values().view(),
            ResponseBatch::Logits(l) => l.values().view(),
        }
    }

    fn is_probs(&self) -> bool {
        matches!(self, ResponseBatch::Probs(_))
    }
}

/// One generator objective evaluation, split into its terms.
///
/// Terms are stored unweighted; `l_gen` is the weighted sum
/// `l_oh + alpha * l_a + beta * l_ie + l_d` accumulated in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_oh: f64,
    pub l_a: f64,
    pub l_ie: f64,
    pub l_d: f64,
    pub l_gen: f64,
}

impl LossBreakdown {
    pub fn compose(l_oh: f64, l_a: f64, l_ie: f64, l_d: f64, weights: GenLossWeights) -> Self {
        let l_gen = l_oh + weights.alpha as f64 * l_a + weights.beta as f64 * l_ie + l_d;
        Self { l_oh, l_a, l_ie, l_d, l_gen }
    }
}

// ---------------------------------------------------------------------------
// Value-level losses
// ---------------------------------------------------------------------------

fn check_same_shape(a: ArrayView2<f32>, b: ArrayView2<f32>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Confidence term: mean negative log of the teacher's top probability.
pub fn one_hot_loss(probs: &ProbBatch) -> Result<f32> {
    Ok(kernels::one_hot(probs.values().view()))
}

/// Feature-excitation term: negated batch mean L1 norm of the taps.
pub fn activation_loss(acts: &ActivationSet) -> Result<f32> {
    let views: Vec<_> = acts.tensors().iter().map(|t| t.view()).collect();
    Ok(kernels::activation(&views))
}

/// Class-balance term: negated entropy of the class frequency.
pub fn info_entropy_loss(freq: &ClassFrequency) -> f32 {
    kernels::info_entropy(freq.values().view())
}

/// Batch-mean Jensen-Shannon divergence (base 2) between paired rows.
pub fn js_divergence(p: &ProbBatch, q: &ProbBatch) -> Result<f32> {
    check_same_shape(p.values().view(), q.values().view(), "js divergence")?;
    Ok(kernels::js(p.values().view(), q.values().view()))
}

/// Teacher-student disagreement term for the generator objective.
///
/// JS and KLD variants require probabilities; the L1 variant compares
/// whichever representation both sides supply (logits in training).
pub fn discrepancy_loss(t: ResponseBatch, s: ResponseBatch, kind: DiscrepancyKind) -> Result<f32> {
    match kind {
        DiscrepancyKind::Js | DiscrepancyKind::Kld => {
            if !t.is_probs() || !s.is_probs() {
                return Err(Error::Invalid(format!(
                    "{kind} discrepancy requires probability inputs"
                )));
            }
        }
        DiscrepancyKind::L1 => {
            if t.is_probs() != s.is_probs() {
                return Err(Error::Invalid(
                    "l1 discrepancy requires both responses in the same representation".into(),
                ));
            }
        }
    }
    check_same_shape(t.view(), s.view(), "discrepancy")?;
    Ok(kernels::discrepancy(t.view(), s.view(), kind))
}

/// Distillation loss: mean absolute difference between teacher and student
/// responses, on raw logits or on softmax probabilities.
pub fn kd_loss(t: &LogitBatch, s: &LogitBatch, kind: KdResponseKind) -> Result<f32> {
    check_same_shape(t.values().view(), s.values().view(), "kd loss")?;
    Ok(match kind {
        KdResponseKind::Logits => kernels::l1_mean(t.values().view(), s.values().view()),
        KdResponseKind::Probs => {
            let pt = crate::types::softmax(t.values().view());
            let ps = crate::types::softmax(s.values().view());
            kernels::l1_mean(pt.view(), ps.view())
        }
    })
}

/// Full generator objective on concrete values.
///
/// `acts = None` records a zero activation term (used where feature taps are
/// disabled).  The discrepancy here compares the probability vectors; the
/// training graph applies the L1 variant to raw logits instead.
pub fn generator_loss(
    probs_t: &ProbBatch,
    probs_s: &ProbBatch,
    acts: Option<&ActivationSet>,
    weights: GenLossWeights,
    kind: DiscrepancyKind,
) -> Result<LossBreakdown> {
    check_same_shape(probs_t.values().view(), probs_s.values().view(), "generator loss")?;
    if let Some(a) = acts {
        if a.batch_size() != probs_t.n() {
            return Err(Error::Invalid(format!(
                "activation batch {} does not match probability batch {}",
                a.batch_size(),
                probs_t.n()
            )));
        }
    }
    let l_oh = one_hot_loss(probs_t)? as f64;
    let l_a = match acts {
        Some(a) => activation_loss(a)? as f64,
        None => 0.0,
    };
    let l_ie = info_entropy_loss(&ClassFrequency::from_probs(probs_t)) as f64;
    let l_d = discrepancy_loss(
        ResponseBatch::Probs(probs_t),
        ResponseBatch::Probs(probs_s),
        kind,
    )? as f64;
    Ok(LossBreakdown::compose(l_oh, l_a, l_ie, l_d, weights))
}

// ---------------------------------------------------------------------------
// Graph nodes
// ---------------------------------------------------------------------------

fn value2(g: &Graph, id: NodeId) -> Array2<f32> {
    g.value(id)
        .clone()
        .into_dimensionality::<Ix2>()
        .expect("loss nodes take 2-d inputs")
}

fn scalar_node(
    g: &mut Graph,
    value: f32,
    parents: Vec<(NodeId, Array2<f32>)>,
) -> NodeId {
    let requires = parents.iter().any(|(id, _)| g.requires_grad(*id));
    g.push(
        nnet::ops::scalar(value),
        requires,
        requires.then(|| -> nnet::BackwardFn {
            Box::new(move |gy, store| {
                let f = gy[ndarray::IxDyn(&[])];
                for (id, grad) in parents {
                    if store.needs(id) {
                        store.accumulate(id, grad.mapv(|v| v * f).into_dyn());
                    }
                }
            })
        }),
    )
}

/// Graph node for [`one_hot_loss`] on a probability node.
pub fn node_one_hot(g: &mut Graph, p: NodeId) -> NodeId {
    let pv = value2(g, p);
    let value = kernels::one_hot(pv.view());
    let grad = kernels::one_hot_grad(pv.view());
    scalar_node(g, value, vec![(p, grad)])
}

/// Graph node for [`activation_loss`] over one or more feature tap nodes.
pub fn node_activation(g: &mut Graph, taps: &[NodeId]) -> NodeId {
    let values: Vec<Array2<f32>> = taps.iter().map(|&t| value2(g, t)).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let value = kernels::activation(&views);
    let grads = kernels::activation_grad(&views);
    scalar_node(g, value, taps.iter().copied().zip(grads).collect())
}

/// Graph node for [`info_entropy_loss`] of a probability node's batch
/// class frequency.
pub fn node_info_entropy(g: &mut Graph, p: NodeId) -> NodeId {
    let pv = value2(g, p);
    let value = kernels::info_entropy_of_probs(pv.view());
    let grad = kernels::info_entropy_of_probs_grad(pv.view());
    scalar_node(g, value, vec![(p, grad)])
}

/// Graph node for the teacher-student discrepancy between two response nodes.
pub fn node_discrepancy(g: &mut Graph, t: NodeId, s: NodeId, kind: DiscrepancyKind) -> NodeId {
    let tv = value2(g, t);
    let sv = value2(g, s);
    let value = kernels::discrepancy(tv.view(), sv.view(), kind);
    let gt = kernels::discrepancy_grad_t(tv.view(), sv.view(), kind);
    let gs = kernels::discrepancy_grad_s(tv.view(), sv.view(), kind);
    scalar_node(g, value, vec![(t, gt), (s, gs)])
}

/// Graph node for the mean absolute difference between two nodes.
pub fn node_l1_mean(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let av = value2(g, a);
    let bv = value2(g, b);
    let value = kernels::l1_mean(av.view(), bv.view());
    let (ga, gb) = kernels::l1_mean_grad(av.view(), bv.view());
    scalar_node(g, value, vec![(a, ga), (b, gb)])
}

/// Graph node for the distillation loss between teacher and student logits.
pub fn node_kd(g: &mut Graph, t_logits: NodeId, s_logits: NodeId, kind: KdResponseKind) -> NodeId {
    match kind {
        KdResponseKind::Logits => node_l1_mean(g, t_logits, s_logits),
        KdResponseKind::Probs => {
            let pt = nnet::ops::softmax(g, t_logits);
            let ps = nnet::ops::softmax(g, s_logits);
            node_l1_mean(g, pt, ps)
        }
    }
}
