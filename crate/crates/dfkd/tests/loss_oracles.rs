//! Oracle tests for the loss suite.
//!
//! Expected constants below were derived by hand from the loss definitions
//! (worked arithmetic in comments) before the implementation was written, and
//! are frozen here: the implementation must come to them, not vice versa.
//! Gradients are validated against central finite differences in f64 at step
//! 1e-3 with relative error <= 1e-4 on small inputs.

use approx::assert_abs_diff_eq;
use dfkd::losses::kernels;
use dfkd::losses::{
    self, generator_loss, ActivationSet, ClassFrequency, LossBreakdown, ResponseBatch,
};
use dfkd::types::{softmax, DiscrepancyKind, GenLossWeights, KdResponseKind, LogitBatch, ProbBatch};
use ndarray::{arr1, arr2, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Worked values
// ---------------------------------------------------------------------------

#[test]
fn one_hot_loss_worked_values() {
    // rows [0.9,0.1] and [0.8,0.2]: -(ln 0.9 + ln 0.8)/2
    //   = -(-0.105360516 + -0.223143551)/2 = 0.164252034
    let p = ProbBatch::new(arr2(&[[0.9f32, 0.1], [0.8, 0.2]])).unwrap();
    assert_abs_diff_eq!(losses::one_hot_loss(&p).unwrap(), 0.16425205, epsilon = 1e-4);

    // exactly one-hot rows -> 0
    let p = ProbBatch::new(arr2(&[[1.0f32, 0.0], [0.0, 1.0]])).unwrap();
    assert!(losses::one_hot_loss(&p).unwrap().abs() <= 1e-6);

    // uniform rows over C=10 -> ln 10 = 2.302585093
    let p = ProbBatch::new(Array2::from_elem((3, 10), 0.1f32)).unwrap();
    assert_abs_diff_eq!(losses::one_hot_loss(&p).unwrap(), 2.3025851, epsilon = 1e-4);
}

#[test]
fn activation_loss_worked_values() {
    // two identical samples with activations [1,-2,3]: -(6+6)/2 = -6
    let acts = ActivationSet::new(
        vec![arr2(&[[1.0f32, -2.0, 3.0], [1.0, -2.0, 3.0]])],
        vec!["features".into()],
    )
    .unwrap();
    assert_abs_diff_eq!(losses::activation_loss(&acts).unwrap(), -6.0, epsilon = 1e-6);

    // all zero -> 0
    let acts = ActivationSet::new(vec![Array2::zeros((4, 7))], vec!["features".into()]).unwrap();
    assert_abs_diff_eq!(losses::activation_loss(&acts).unwrap(), 0.0, epsilon = 1e-9);

    // homogeneity: doubling the activations doubles the magnitude
    let base = arr2(&[[0.5f32, -1.5], [2.0, 0.25]]);
    let a1 = ActivationSet::new(vec![base.clone()], vec!["features".into()]).unwrap();
    let a2 = ActivationSet::new(vec![base.mapv(|v| v * 2.0)], vec!["features".into()]).unwrap();
    let (l1, l2) = (
        losses::activation_loss(&a1).unwrap(),
        losses::activation_loss(&a2).unwrap(),
    );
    assert_abs_diff_eq!(l2, 2.0 * l1, epsilon = 1e-6);
    assert!(l1 <= 0.0 && l2 <= 0.0);
}

#[test]
fn info_entropy_loss_worked_values() {
    // one-hot frequency -> 0 (zero entropy)
    let f = ClassFrequency::new(arr1(&[1.0f32, 0.0, 0.0])).unwrap();
    assert!(losses::info_entropy_loss(&f).abs() <= 1e-6);

    // uniform over 10 -> -ln 10 = -2.302585093
    let f = ClassFrequency::new(Array1::from_elem(10, 0.1f32)).unwrap();
    assert_abs_diff_eq!(losses::info_entropy_loss(&f), -2.3025851, epsilon = 1e-4);

    // [0.5, 0.5] -> -ln 2 = -0.693147
    let f = ClassFrequency::new(arr1(&[0.5f32, 0.5])).unwrap();
    assert_abs_diff_eq!(losses::info_entropy_loss(&f), -0.6931472, epsilon = 1e-4);
}

#[test]
fn js_divergence_worked_values() {
    // identical distributions -> 0
    let p = ProbBatch::new(arr2(&[[0.3f32, 0.7], [0.6, 0.4]])).unwrap();
    assert!(losses::js_divergence(&p, &p).unwrap().abs() <= 1e-6);

    // disjoint one-hots -> 1 (base-2 bound)
    let a = ProbBatch::new(arr2(&[[1.0f32, 0.0]])).unwrap();
    let b = ProbBatch::new(arr2(&[[0.0f32, 1.0]])).unwrap();
    assert_abs_diff_eq!(losses::js_divergence(&a, &b).unwrap(), 1.0, epsilon = 1e-6);

    // [0.5,0.5] vs [1,0]: M = [0.75,0.25]
    //   KL(P||M) = 0.5*log2(0.5/0.75) + 0.5*log2(0.5/0.25) = 0.20751875
    //   KL(Q||M) = 1*log2(1/0.75)                          = 0.41503750
    //   JS = (0.20751875 + 0.41503750)/2                   = 0.311278125
    let p = ProbBatch::new(arr2(&[[0.5f32, 0.5]])).unwrap();
    let q = ProbBatch::new(arr2(&[[1.0f32, 0.0]])).unwrap();
    assert_abs_diff_eq!(losses::js_divergence(&p, &q).unwrap(), 0.31127812, epsilon = 1e-4);
}

#[test]
fn discrepancy_loss_worked_values() {
    let p = ProbBatch::new(arr2(&[[0.25f32, 0.75], [0.5, 0.5]])).unwrap();
    // JS kind, equal inputs -> 1 - 0 = 1
    assert_abs_diff_eq!(
        losses::discrepancy_loss(
            ResponseBatch::Probs(&p),
            ResponseBatch::Probs(&p),
            DiscrepancyKind::Js
        )
        .unwrap(),
        1.0,
        epsilon = 1e-6
    );

    // JS kind, maximal disagreement -> 0
    let a = ProbBatch::new(arr2(&[[1.0f32, 0.0]])).unwrap();
    let b = ProbBatch::new(arr2(&[[0.0f32, 1.0]])).unwrap();
    assert_abs_diff_eq!(
        losses::discrepancy_loss(
            ResponseBatch::Probs(&a),
            ResponseBatch::Probs(&b),
            DiscrepancyKind::Js
        )
        .unwrap(),
        0.0,
        epsilon = 1e-6
    );

    // L1 kind on logits [2,-1] vs [0,0]: -(|2| + |-1|)/2 = -1.5
    let t = LogitBatch::new(arr2(&[[2.0f32, -1.0]])).unwrap();
    let s = LogitBatch::new(arr2(&[[0.0f32, 0.0]])).unwrap();
    assert_abs_diff_eq!(
        losses::discrepancy_loss(
            ResponseBatch::Logits(&t),
            ResponseBatch::Logits(&s),
            DiscrepancyKind::L1
        )
        .unwrap(),
        -1.5,
        epsilon = 1e-6
    );
}

#[test]
fn kld_discrepancy_is_asymmetric() {
    // KL([0.9,0.1] || [0.5,0.5]) = 0.9 ln 1.8 + 0.1 ln 0.2 = 0.368064
    // KL([0.5,0.5] || [0.9,0.1]) = 0.5 ln(5/9) + 0.5 ln 5  = 0.510826
    let p = ProbBatch::new(arr2(&[[0.9f32, 0.1]])).unwrap();
    let q = ProbBatch::new(arr2(&[[0.5f32, 0.5]])).unwrap();
    let fwd = losses::discrepancy_loss(
        ResponseBatch::Probs(&p),
        ResponseBatch::Probs(&q),
        DiscrepancyKind::Kld,
    )
    .unwrap();
    let rev = losses::discrepancy_loss(
        ResponseBatch::Probs(&q),
        ResponseBatch::Probs(&p),
        DiscrepancyKind::Kld,
    )
    .unwrap();
    assert_abs_diff_eq!(fwd, -0.368064, epsilon = 1e-4);
    assert_abs_diff_eq!(rev, -0.510826, epsilon = 1e-4);
    assert!((fwd - rev).abs() > 0.1, "KLD must be asymmetric");
}

#[test]
fn kd_loss_worked_values() {
    let t = LogitBatch::new(arr2(&[[2.0f32, -1.0]])).unwrap();
    let s = LogitBatch::new(arr2(&[[0.0f32, 0.0]])).unwrap();
    // mean over all elements of |t - s| = (2 + 1)/2 = 1.5
    assert_abs_diff_eq!(
        losses::kd_loss(&t, &s, KdResponseKind::Logits).unwrap(),
        1.5,
        epsilon = 1e-6
    );
    // identical responses -> 0
    assert!(losses::kd_loss(&t, &t, KdResponseKind::Logits).unwrap().abs() <= 1e-9);
    // symmetry
    let a = LogitBatch::new(arr2(&[[0.3f32, 1.2, -0.7], [2.0, 0.0, 0.5]])).unwrap();
    let b = LogitBatch::new(arr2(&[[-0.1f32, 0.4, 0.9], [1.0, -1.0, 0.0]])).unwrap();
    assert_abs_diff_eq!(
        losses::kd_loss(&a, &b, KdResponseKind::Logits).unwrap(),
        losses::kd_loss(&b, &a, KdResponseKind::Logits).unwrap(),
        epsilon = 1e-7
    );
}

#[test]
fn generator_loss_composition_worked_values() {
    // Arithmetic oracle over independent sub-term values:
    // 0.16425 + 0.1*(-6) + 5*(-2.30259) + 1 = -10.94870
    let bd = LossBreakdown::compose(
        0.16425205,
        -6.0,
        -2.3025851,
        1.0,
        GenLossWeights::new(0.1, 5.0).unwrap(),
    );
    assert_abs_diff_eq!(bd.l_gen, -10.94870, epsilon = 1e-4);

    // alpha=0, beta=0, equal one-hot outputs: l_oh = 0, l_d = 1 -> l_gen = 1
    let p = ProbBatch::new(arr2(&[[1.0f32, 0.0], [0.0, 1.0]])).unwrap();
    let bd = generator_loss(
        &p,
        &p,
        None,
        GenLossWeights::new(0.0, 0.0).unwrap(),
        DiscrepancyKind::Js,
    )
    .unwrap();
    assert_abs_diff_eq!(bd.l_gen, 1.0, epsilon = 1e-5);
    assert!(bd.l_oh.abs() <= 1e-5);
    assert_abs_diff_eq!(bd.l_d, 1.0, epsilon = 1e-6);

    // Full composition on consistent inputs matches individually computed
    // terms and satisfies the sum identity.
    let t_logits = arr2(&[[1.3f32, -0.2, 0.4], [0.1, 2.0, -1.0], [0.0, 0.3, 0.9]]);
    let s_logits = arr2(&[[0.2f32, 0.6, -0.3], [1.0, -0.4, 0.2], [0.5, 0.5, 0.1]]);
    let pt = ProbBatch::new(softmax(t_logits.view())).unwrap();
    let ps = ProbBatch::new(softmax(s_logits.view())).unwrap();
    let acts = ActivationSet::new(
        vec![arr2(&[[0.4f32, -1.0], [2.0, 0.3], [-0.6, 0.9]])],
        vec!["features".into()],
    )
    .unwrap();
    let w = GenLossWeights::new(0.1, 5.0).unwrap();
    let bd = generator_loss(&pt, &ps, Some(&acts), w, DiscrepancyKind::Js).unwrap();
    let l_oh = losses::one_hot_loss(&pt).unwrap() as f64;
    let l_a = losses::activation_loss(&acts).unwrap() as f64;
    let l_ie = losses::info_entropy_loss(&ClassFrequency::from_probs(&pt)) as f64;
    let l_d = losses::discrepancy_loss(
        ResponseBatch::Probs(&pt),
        ResponseBatch::Probs(&ps),
        DiscrepancyKind::Js,
    )
    .unwrap() as f64;
    assert_abs_diff_eq!(bd.l_oh, l_oh, epsilon = 1e-9);
    assert_abs_diff_eq!(bd.l_a, l_a, epsilon = 1e-9);
    assert_abs_diff_eq!(bd.l_ie, l_ie, epsilon = 1e-9);
    assert_abs_diff_eq!(bd.l_d, l_d, epsilon = 1e-9);
    let expected = l_oh + 0.1 * l_a + 5.0 * l_ie + l_d;
    assert_abs_diff_eq!(bd.l_gen, expected, epsilon = 1e-6);
}

// ---------------------------------------------------------------------------
// Bounds / symmetry / extremum invariants on random inputs
// ---------------------------------------------------------------------------

fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    let logits = Array2::from_shape_fn((n, c), |_| rng.random::<f64>() * 6.0 - 3.0);
    softmax(logits.view())
}

#[test]
fn bounds_hold_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..200 {
        let n = rng.random_range(1..6);
        let c = rng.random_range(2..8);
        let p32 = random_probs(&mut rng, n, c).mapv(|v| v as f32);
        let q32 = random_probs(&mut rng, n, c).mapv(|v| v as f32);
        let p = ProbBatch::new(p32).unwrap();
        let q = ProbBatch::new(q32).unwrap();

        let oh = losses::one_hot_loss(&p).unwrap();
        assert!(oh >= 0.0, "one-hot loss must be nonnegative, got {oh}");

        let js = losses::js_divergence(&p, &q).unwrap();
        assert!((0.0..=1.0).contains(&js), "JS out of [0,1]: {js}");

        let d = losses::discrepancy_loss(
            ResponseBatch::Probs(&p),
            ResponseBatch::Probs(&q),
            DiscrepancyKind::Js,
        )
        .unwrap();
        assert!((0.0..=1.0).contains(&d), "JS discrepancy out of [0,1]: {d}");

        let f = ClassFrequency::from_probs(&p);
        let ie = losses::info_entropy_loss(&f);
        let lower = -(c as f32).ln();
        assert!(
            ie >= lower - 1e-6 && ie <= 0.0,
            "entropy loss {ie} outside [{lower}, 0]"
        );

        let acts = ActivationSet::new(
            vec![Array2::from_shape_fn((n, 5), |_| rng.random::<f32>() * 4.0 - 2.0)],
            vec!["features".into()],
        )
        .unwrap();
        assert!(losses::activation_loss(&acts).unwrap() <= 0.0);

        let ta = LogitBatch::new(Array2::from_shape_fn((n, c), |_| rng.random::<f32>() * 4.0 - 2.0)).unwrap();
        let tb = LogitBatch::new(Array2::from_shape_fn((n, c), |_| rng.random::<f32>() * 4.0 - 2.0)).unwrap();
        assert!(losses::kd_loss(&ta, &tb, KdResponseKind::Logits).unwrap() >= 0.0);
    }
}

#[test]
fn js_is_symmetric_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..100 {
        let p32 = random_probs(&mut rng, 3, 5).mapv(|v| v as f32);
        let q32 = random_probs(&mut rng, 3, 5).mapv(|v| v as f32);
        let p = ProbBatch::new(p32).unwrap();
        let q = ProbBatch::new(q32).unwrap();
        let ab = losses::js_divergence(&p, &q).unwrap();
        let ba = losses::js_divergence(&q, &p).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-6);
    }
}

#[test]
fn uniform_frequency_minimizes_entropy_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let uniform_value =
        losses::info_entropy_loss(&ClassFrequency::new(Array1::from_elem(10, 0.1f32)).unwrap());
    for _ in 0..1000 {
        let f32row = random_probs(&mut rng, 1, 10).mapv(|v| v as f32);
        let f = ClassFrequency::new(f32row.row(0).to_owned()).unwrap();
        let v = losses::info_entropy_loss(&f);
        assert!(
            v >= uniform_value - 1e-6,
            "found frequency with loss {v} below the uniform minimum {uniform_value}"
        );
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks (f64, step 1e-3, rel err <= 1e-4)
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-3;
const FD_REL: f64 = 1e-4;
// Central differences carry an O(f''' h^2) truncation term; for log-based
// losses f''' ~ 1/p^2, so FD points keep probabilities >= 0.1 (see
// `fd_probs`) and near-zero gradient components get a small absolute floor.
const FD_ABS: f64 = 5e-5;

/// Random probability rows bounded away from zero so central differences at
/// step 1e-3 stay accurate to well under the 1e-4 gate.
fn fd_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    assert!(c * 2 <= 10, "floor of 0.1 needs few classes");
    let sm = random_probs(rng, n, c);
    sm.mapv(|v| 0.1 + (1.0 - 0.1 * c as f64) * v)
}

/// Assert analytic gradients match central differences of `f` at `x`.
fn fd_check_2d(name: &str, f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>) {
    assert!(x.len() <= 32, "{name}: FD inputs must stay small");
    let mut w = x.clone();
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        w.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
        let fp = f(&w);
        w.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
        let fm = f(&w);
        w.as_slice_mut().unwrap()[idx] = orig;
        let num = (fp - fm) / (2.0 * FD_STEP);
        let ana = analytic.as_slice().unwrap()[idx];
        let err = (num - ana).abs();
        assert!(
            err <= FD_REL * (num.abs() + ana.abs()) + FD_ABS,
            "{name}: element {idx}: analytic {ana} vs numeric {num} (err {err})"
        );
    }
}

fn fd_check_1d(name: &str, f: &dyn Fn(&Array1<f64>) -> f64, x: &Array1<f64>, analytic: &Array1<f64>) {
    let x2 = x.clone().insert_axis(ndarray::Axis(0));
    let a2 = analytic.clone().insert_axis(ndarray::Axis(0));
    fd_check_2d(name, &|w: &Array2<f64>| f(&w.row(0).to_owned()), &x2, &a2);
}

#[test]
fn one_hot_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let p = fd_probs(&mut rng, 4, 5);
    let g = kernels::one_hot_grad(p.view());
    fd_check_2d("one_hot", &|w| kernels::one_hot(w.view()), &p, &g);
}

#[test]
fn activation_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    // keep away from |x| = 0 kink
    let a = Array2::from_shape_fn((4, 6), |_| {
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        v + 0.05 * v.signum()
    });
    let g = kernels::activation_grad(&[a.view()]);
    fd_check_2d("activation", &|w| kernels::activation(&[w.view()]), &a, &g[0]);
}

#[test]
fn info_entropy_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let f = fd_probs(&mut rng, 1, 5).row(0).to_owned();
    let g = kernels::info_entropy_grad(f.view());
    fd_check_1d("info_entropy(freq)", &|w| kernels::info_entropy(w.view()), &f, &g);

    // Through the batch-frequency averaging as used by the generator loss.
    let p = fd_probs(&mut rng, 4, 5);
    let g = kernels::info_entropy_of_probs_grad(p.view());
    fd_check_2d(
        "info_entropy(probs)",
        &|w| kernels::info_entropy_of_probs(w.view()),
        &p,
        &g,
    );
}

#[test]
fn js_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let p = fd_probs(&mut rng, 4, 4);
    let q = fd_probs(&mut rng, 4, 4);
    let (gp, gq) = kernels::js_grad(p.view(), q.view());
    fd_check_2d("js wrt p", &|w| kernels::js(w.view(), q.view()), &p, &gp);
    fd_check_2d("js wrt q", &|w| kernels::js(p.view(), w.view()), &q, &gq);
}

#[test]
fn l1_mean_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let a = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>() * 4.0 - 2.0);
    // keep |a - b| away from 0 so the FD direction is well defined
    let b = &a + &Array2::from_shape_fn((4, 4), |_| {
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        v + 0.1 * v.signum()
    });
    let (ga, gb) = kernels::l1_mean_grad(a.view(), b.view());
    fd_check_2d("l1 wrt a", &|w| kernels::l1_mean(w.view(), b.view()), &a, &ga);
    fd_check_2d("l1 wrt b", &|w| kernels::l1_mean(a.view(), w.view()), &b, &gb);
}

#[test]
fn kld_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let p = fd_probs(&mut rng, 4, 4);
    let q = fd_probs(&mut rng, 4, 4);
    let (gp, gq) = kernels::kld_grad(p.view(), q.view());
    fd_check_2d("kld wrt p", &|w| kernels::kld(w.view(), q.view()), &p, &gp);
    fd_check_2d("kld wrt q", &|w| kernels::kld(p.view(), w.view()), &q, &gq);
}

#[test]
fn discrepancy_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    for kind in [DiscrepancyKind::Js, DiscrepancyKind::L1, DiscrepancyKind::Kld] {
        let t = fd_probs(&mut rng, 4, 4);
        let s = fd_probs(&mut rng, 4, 4);
        let gs = kernels::discrepancy_grad_s(t.view(), s.view(), kind);
        fd_check_2d(
            &format!("discrepancy[{kind}] wrt s"),
            &|w| kernels::discrepancy(t.view(), w.view(), kind),
            &s,
            &gs,
        );
    }
}

#[test]
fn kd_gradient_matches_fd_on_logits_and_probs() {
    let mut rng = ChaCha8Rng::seed_from_u64(207);
    let t = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>() * 4.0 - 2.0);
    let s = &t + &Array2::from_shape_fn((4, 4), |_| {
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        v + 0.1 * v.signum()
    });

    // logits mode: plain elementwise mean-abs
    let (_, gs) = kernels::l1_mean_grad(t.view(), s.view());
    fd_check_2d("kd logits", &|w| kernels::l1_mean(t.view(), w.view()), &s, &gs);

    // probs mode: |softmax(t) - softmax(s)| with gradient through softmax
    let pt = softmax(t.view());
    let f = |w: &Array2<f64>| kernels::l1_mean(pt.view(), softmax(w.view()).view());
    let ps = softmax(s.view());
    let (_, gp) = kernels::l1_mean_grad(pt.view(), ps.view());
    let gs = kernels::softmax_vjp(ps.view(), gp.view());
    fd_check_2d("kd probs", &f, &s, &gs);
}

#[test]
fn generator_loss_gradients_match_fd() {
    // Full composite objective as one function of teacher probs, student
    // probs, and activations under JS discrepancy.
    let mut rng = ChaCha8Rng::seed_from_u64(208);
    let (alpha, beta) = (0.3f64, 2.0f64);
    let pt = fd_probs(&mut rng, 3, 4);
    let ps = fd_probs(&mut rng, 3, 4);
    let acts = Array2::from_shape_fn((3, 4), |_| {
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        v + 0.05 * v.signum()
    });

    let composite = |pt: &Array2<f64>, ps: &Array2<f64>, acts: &Array2<f64>| -> f64 {
        kernels::one_hot(pt.view())
            + alpha * kernels::activation(&[acts.view()])
            + beta * kernels::info_entropy_of_probs(pt.view())
            + kernels::discrepancy(pt.view(), ps.view(), DiscrepancyKind::Js)
    };

    // d/d pt: one-hot + beta * entropy-chain + JS part (via 1 - js)
    let (js_gp, js_gq) = kernels::js_grad(pt.view(), ps.view());
    let g_pt = kernels::one_hot_grad(pt.view())
        + kernels::info_entropy_of_probs_grad(pt.view()).mapv(|v| v * beta)
        - js_gp;
    let g_ps = -js_gq;
    let g_acts = kernels::activation_grad(&[acts.view()])[0].mapv(|v| v * alpha);

    fd_check_2d("generator wrt teacher probs", &|w| composite(w, &ps, &acts), &pt, &g_pt);
    fd_check_2d("generator wrt student probs", &|w| composite(&pt, w, &acts), &ps, &g_ps);
    fd_check_2d("generator wrt activations", &|w| composite(&pt, &ps, w), &acts, &g_acts);
}

// ---------------------------------------------------------------------------
// Misc invariants
// ---------------------------------------------------------------------------

proptest::proptest! {
    #[test]
    fn prop_js_symmetric_and_bounded(
        a in proptest::collection::vec(-4.0f32..4.0, 6),
        b in proptest::collection::vec(-4.0f32..4.0, 6),
    ) {
        let la = Array2::from_shape_vec((2, 3), a).unwrap();
        let lb = Array2::from_shape_vec((2, 3), b).unwrap();
        let p = ProbBatch::new(softmax(la.view())).unwrap();
        let q = ProbBatch::new(softmax(lb.view())).unwrap();
        let ab = losses::js_divergence(&p, &q).unwrap();
        let ba = losses::js_divergence(&q, &p).unwrap();
        proptest::prop_assert!((0.0..=1.0).contains(&ab));
        proptest::prop_assert!((ab - ba).abs() <= 1e-6);
    }

    #[test]
    fn prop_breakdown_sum_identity(
        l_oh in 0.0f64..3.0,
        l_a in -10.0f64..0.0,
        l_ie in -2.3f64..0.0,
        l_d in -5.0f64..1.0,
        alpha in 0.0f32..2.0,
        beta in 0.0f32..10.0,
    ) {
        let w = GenLossWeights::new(alpha, beta).unwrap();
        let bd = LossBreakdown::compose(l_oh, l_a, l_ie, l_d, w);
        let expected = bd.l_oh + alpha as f64 * bd.l_a + beta as f64 * bd.l_ie + bd.l_d;
        proptest::prop_assert!((bd.l_gen - expected).abs() <= 1e-9);
    }
}

#[test]
fn empty_batch_and_shape_mismatch_are_rejected() {
    assert!(ProbBatch::new(Array2::zeros((0, 3))).is_err());
    let p = ProbBatch::new(arr2(&[[0.5f32, 0.5]])).unwrap();
    let q = ProbBatch::new(arr2(&[[0.4f32, 0.3, 0.3]])).unwrap();
    assert!(losses::js_divergence(&p, &q).is_err());
    assert!(ActivationSet::new(vec![], vec![]).is_err());
    assert!(ActivationSet::new(
        vec![Array2::zeros((2, 3)), Array2::zeros((3, 3))],
        vec!["a".into(), "b".into()]
    )
    .is_err());
    let t = LogitBatch::new(arr2(&[[1.0f32, 2.0]])).unwrap();
    let s = LogitBatch::new(arr2(&[[1.0f32, 2.0, 3.0]])).unwrap();
    assert!(losses::kd_loss(&t, &s, KdResponseKind::Logits).is_err());
}
