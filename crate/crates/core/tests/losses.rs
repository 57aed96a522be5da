use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use zxyseg::losses::*;
use zxyseg::tensor::Tensor;

fn logits(c: usize, n: usize, v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(&[c, 1, 1, n], v).unwrap()
}

/// Softmax of one voxel's logits, written out directly.
fn probs_at(z: &Tensor<f64>, v: usize) -> Vec<f64> {
    let c = z.channels();
    let n = z.len() / c;
    let e: Vec<f64> = (0..c).map(|k| z.data()[k * n + v].exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn cross_entropy_of_a_two_voxel_case() {
    let z = logits(3, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, -1.0]);
    let labels = [2u8, 0];
    let want = -(probs_at(&z, 0)[2].ln() + probs_at(&z, 1)[0].ln()) / 2.0;
    assert_abs_diff_eq!(cross_entropy_loss(&z, &labels).unwrap(), want, epsilon = 1e-12);
}

#[test]
fn dice_of_a_hand_example() {
    // Two classes over four voxels; probabilities given directly.
    let p = logits(2, 4, vec![0.9, 0.2, 0.6, 0.1, 0.1, 0.8, 0.4, 0.9]);
    let labels = [0u8, 1, 0, 1];
    let e = DICE_EPS;
    let d0 = (2.0 * (0.9 + 0.6) + e) / ((0.9 + 0.2 + 0.6 + 0.1) + 2.0 + e);
    let d1 = (2.0 * (0.8 + 0.9) + e) / ((0.1 + 0.8 + 0.4 + 0.9) + 2.0 + e);
    assert_abs_diff_eq!(dice_loss(&p, &labels).unwrap(), 1.0 - (d0 + d1) / 2.0, epsilon = 1e-12);
}

#[test]
fn uncertainty_matches_power_form() {
    let m = logits(2, 2, vec![0.3, 0.9, 0.7, 0.1]);
    let a = logits(2, 2, vec![0.5, 0.6, 0.5, 0.4]);
    let want: f64 = m.data().iter().zip(a.data()).map(|(m, a)| (m / a).powf(*a)).sum::<f64>() / 4.0;
    assert_abs_diff_eq!(uncertainty_loss(&m, &a).unwrap(), want, epsilon = 1e-12);
}

#[test]
fn uniform_logits_give_log_three() {
    let z = Tensor::<f32>::zeros(&[3, 4, 4, 4]);
    let labels = vec![1u8; 64];
    let l = total_loss(&z, &z, &labels).unwrap();
    assert_abs_diff_eq!(l.ce, 3f64.ln(), epsilon = 1e-6);
    assert_abs_diff_eq!(l.un, 1.0, epsilon = 1e-6);
}

#[test]
fn confident_correct_prediction_costs_almost_nothing() {
    let labels = [0u8, 1, 2, 2, 1, 0];
    let mut v = vec![-30.0; 18];
    for (i, &l) in labels.iter().enumerate() {
        v[l as usize * 6 + i] = 30.0;
    }
    let z = logits(3, 6, v);
    let l = total_loss(&z, &z, &labels).unwrap();
    assert!(l.ce < 1e-12);
    assert!(l.dice < 1e-6);
    assert_abs_diff_eq!(l.un, 1.0, epsilon = 1e-9);
}

#[test]
fn extreme_logits_stay_finite() {
    let z = logits(3, 2, vec![1e4, -1e4, -1e4, 1e4, 0.0, 0.0]);
    let (l, gm, ga) = total_loss_with_grad(&z, &z.map(|v| -v), &[1, 1], true).unwrap();
    assert!(l.is_finite());
    assert_abs_diff_eq!(l.ce, -(PROB_FLOOR.ln()) / 2.0, epsilon = 1e-9);
    assert!(gm.all_finite() && ga.unwrap().all_finite());
}

#[test]
fn disabling_uncertainty_drops_the_term_and_aux_gradient() {
    let z = logits(3, 2, vec![0.5, -0.2, 0.1, 0.3, 0.0, 1.0]);
    let a = logits(3, 2, vec![0.0, 0.4, -0.3, 0.2, 0.7, 0.1]);
    let (l, _, ga) = total_loss_with_grad(&z, &a, &[0, 2], false).unwrap();
    assert_eq!(l.un, 0.0);
    assert_eq!(l.total, l.ce + l.dice);
    assert!(ga.is_none());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let z = Tensor::<f64>::zeros(&[3, 1, 1, 2]);
    let a = Tensor::<f64>::zeros(&[3, 1, 2, 1]);
    assert!(total_loss(&z, &a, &[0, 0]).is_err());
    assert!(total_loss(&z, &z, &[0, 7]).is_err());
    assert!(total_loss(&z, &z, &[0]).is_err());
}

fn check_gradients(main: &Tensor<f64>, aux: &Tensor<f64>, labels: &[u8]) {
    let (_, gm, ga) = total_loss_with_grad(main, aux, labels, true).unwrap();
    let ga = ga.unwrap();
    let h = 1e-6;
    for (which, analytic) in [(0, &gm), (1, &ga)] {
        for i in 0..main.len() {
            let mut m = main.clone();
            let mut a = aux.clone();
            let t = if which == 0 { &mut m } else { &mut a };
            t.data_mut()[i] += h;
            let up = total_loss(&m, &a, labels).unwrap().total;
            let t = if which == 0 { &mut m } else { &mut a };
            t.data_mut()[i] -= 2.0 * h;
            let down = total_loss(&m, &a, labels).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.data()[i];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs(),
                "head {which} entry {i}: fd {fd}, analytic {an}"
            );
        }
    }
}

#[test]
fn total_gradient_matches_finite_differences() {
    let main = Tensor::from_vec(&[3, 2, 2, 2], (0..24).map(|i| ((i * 7919) % 13) as f64 / 4.0 - 1.5).collect()).unwrap();
    let aux = Tensor::from_vec(&[3, 2, 2, 2], (0..24).map(|i| ((i * 104729) % 11) as f64 / 3.0 - 1.7).collect()).unwrap();
    let labels = [0u8, 1, 2, 2, 1, 0, 0, 2];
    check_gradients(&main, &aux, &labels);
}

fn case(max_c: usize, max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<u8>)> {
    (2..=max_c, 1..=max_n).prop_flat_map(|(c, n)| {
        (
            Just(c),
            prop::collection::vec(-60.0..60.0f64, c * n),
            prop::collection::vec(-60.0..60.0f64, c * n),
            prop::collection::vec(0..c as u8, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn losses_and_gradients_are_finite((c, m, a, labels) in case(4, 12)) {
        let n = labels.len();
        let (l, gm, ga) = total_loss_with_grad(&logits(c, n, m), &logits(c, n, a), &labels, true).unwrap();
        prop_assert!(l.is_finite());
        prop_assert!(l.ce >= 0.0 && (0.0..=1.0).contains(&l.dice) && l.un > 0.0);
        prop_assert!(gm.all_finite() && ga.unwrap().all_finite());
    }

    #[test]
    fn agreeing_heads_give_unit_uncertainty((c, m, _a, labels) in case(4, 12)) {
        let z = logits(c, labels.len(), m);
        let l = total_loss(&z, &z, &labels).unwrap();
        prop_assert!((l.un - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dice_is_invariant_under_voxel_permutation(
        (c, m, _a, labels) in case(4, 12),
        shift in 0usize..12,
    ) {
        let n = labels.len();
        let p = softmax(&logits(c, n, m));
        let rot = |v: usize| (v + shift) % n;
        let mut q = vec![0.0; c * n];
        let mut l2 = vec![0u8; n];
        for v in 0..n {
            l2[rot(v)] = labels[v];
            for k in 0..c {
                q[k * n + rot(v)] = p.data()[k * n + v];
            }
        }
        let d1 = dice_loss(&p, &labels).unwrap();
        let d2 = dice_loss(&logits(c, n, q), &l2).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn dice_is_invariant_under_class_relabelling((c, m, _a, labels) in case(4, 12)) {
        // Reversing the class order in both prediction and labels.
        let n = labels.len();
        let p = softmax(&logits(c, n, m));
        let mut q = vec![0.0; c * n];
        for k in 0..c {
            q[(c - 1 - k) * n..(c - k) * n].copy_from_slice(&p.data()[k * n..(k + 1) * n]);
        }
        let l2: Vec<u8> = labels.iter().map(|&l| (c - 1) as u8 - l).collect();
        let d1 = dice_loss(&p, &labels).unwrap();
        let d2 = dice_loss(&logits(c, n, q), &l2).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn random_gradients_match_finite_differences((c, m, a, labels) in case(3, 4)) {
        let n = labels.len();
        // Moderate logits keep every probability well above the clamp.
        let squash = |v: Vec<f64>| logits(c, n, v.into_iter().map(|x| x / 20.0).collect());
        check_gradients(&squash(m), &squash(a), &labels);
    }
}
