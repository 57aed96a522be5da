use std::collections::HashSet;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use zxyseg::metrics::*;
use zxyseg::volume_io::LabelVolume;
use zxyseg::Error;

mod common;
use common::{brute_force_distances, coords, surface_oracle};

fn mask_pair() -> impl Strategy<Value = ([usize; 3], Vec<bool>, Vec<bool>)> {
    (2usize..7, 2usize..7, 2usize..7).prop_flat_map(|(z, y, x)| {
        let n = z * y * x;
        (
            Just([z, y, x]),
            prop::collection::vec(prop::bool::weighted(0.35), n),
            prop::collection::vec(prop::bool::weighted(0.35), n),
        )
    })
}

fn spacing() -> impl Strategy<Value = [f64; 3]> {
    [0.2f64..2.0, 0.2f64..2.0, 0.2f64..2.0]
}

fn label_volume(mask: &[bool], shape: [usize; 3], sp: [f64; 3]) -> LabelVolume {
    LabelVolume::new(shape, sp, mask.iter().map(|&m| m as u8).collect()).unwrap()
}

#[test]
fn single_voxels_at_known_distance() {
    let shape = [1, 1, 4];
    let a = [true, false, false, false];
    let b = [false, false, false, true];
    let s = surface_distances(&a, &b, shape, [1.0, 1.0, 0.4]).unwrap();
    assert_abs_diff_eq!(s.hd95_mm, 1.2, epsilon = 1e-12);
    assert_abs_diff_eq!(s.asd_mm, 1.2, epsilon = 1e-12);
}

#[test]
fn identical_masks_have_zero_distance_and_unit_overlap() {
    let shape = [3, 4, 5];
    let m: Vec<bool> = (0..60).map(|i| i % 3 != 0).collect();
    let s = surface_distances(&m, &m, shape, [0.4; 3]).unwrap();
    assert_eq!((s.hd95_mm, s.asd_mm), (0.0, 0.0));
    let o = overlap_metrics(&m, &m).unwrap();
    assert_eq!((o.dice, o.jaccard, o.sensitivity), (1.0, 1.0, Some(1.0)));
}

#[test]
fn empty_masks() {
    let empty = [false; 8];
    let one = [true, false, false, false, false, false, false, false];
    let o = overlap_metrics(&empty, &empty).unwrap();
    assert_eq!((o.dice, o.jaccard, o.sensitivity), (1.0, 1.0, Some(1.0)));
    let o = overlap_metrics(&one, &empty).unwrap();
    assert_eq!((o.dice, o.jaccard, o.sensitivity), (0.0, 0.0, None));
    let o = overlap_metrics(&empty, &one).unwrap();
    assert_eq!(o.sensitivity, Some(0.0));
    assert!(matches!(surface_distances(&empty, &one, [2, 2, 2], [1.0; 3]), Err(Error::EmptyMask)));

    let sp = [0.4; 3];
    let m = class_metrics(&label_volume(&one, [2, 2, 2], sp), &label_volume(&empty, [2, 2, 2], sp), 1).unwrap();
    assert_eq!((m.hd95_mm, m.asd_mm, m.sensitivity), (None, None, None));
}

#[test]
fn grid_mismatch_is_an_error() {
    let a = LabelVolume::zeros([2, 2, 2], [0.4; 3]).unwrap();
    let b = LabelVolume::zeros([2, 2, 2], [0.5; 3]).unwrap();
    let c = LabelVolume::zeros([2, 2, 3], [0.4; 3]).unwrap();
    assert!(matches!(evaluate_case("x", &a, &b), Err(Error::ShapeMismatch(_))));
    assert!(matches!(evaluate_case("x", &a, &c), Err(Error::ShapeMismatch(_))));
}

#[test]
fn evaluate_case_separates_classes() {
    let gt = LabelVolume::new([1, 1, 6], [0.4; 3], vec![1, 1, 2, 2, 0, 0]).unwrap();
    let pred = LabelVolume::new([1, 1, 6], [0.4; 3], vec![1, 1, 1, 2, 0, 0]).unwrap();
    let r = evaluate_case("c", &pred, &gt).unwrap();
    assert_abs_diff_eq!(r.tooth.dice, 0.8, epsilon = 1e-12);
    assert_abs_diff_eq!(r.root_canal.dice, 2.0 / 3.0, epsilon = 1e-12);
    assert_eq!(r.root_canal.sensitivity, Some(0.5));
    assert_eq!(r.class(2), Some(&r.root_canal));
    assert_eq!(r.class(0), None);
}

#[test]
fn aggregate_uses_sample_deviation_and_skips_undefined() {
    let m = |dice: f64, hd: Option<f64>| ClassMetrics {
        dice,
        jaccard: dice,
        hd95_mm: hd,
        asd_mm: hd,
        sensitivity: Some(dice),
    };
    let cases = vec![
        MetricsReport { case: "a".into(), tooth: m(0.8, Some(1.0)), root_canal: m(0.5, None) },
        MetricsReport { case: "b".into(), tooth: m(0.9, Some(3.0)), root_canal: m(0.7, Some(2.0)) },
    ];
    let agg = aggregate(cases);
    assert_eq!(agg.n_cases, 2);
    assert_abs_diff_eq!(agg.tooth.dice.mean.unwrap(), 0.85, epsilon = 1e-12);
    assert_abs_diff_eq!(agg.tooth.dice.std.unwrap(), 0.1 / 2f64.sqrt(), epsilon = 1e-12);
    assert_abs_diff_eq!(agg.tooth.hd95_mm.std.unwrap(), 2f64.sqrt(), epsilon = 1e-12);
    assert_eq!(agg.root_canal.hd95_mm.n, 1);
    assert_eq!(agg.root_canal.hd95_mm.std, None);
    assert_eq!(MeanStd::of([]).mean, None);
}

#[test]
fn percentile_interpolates() {
    assert_eq!(percentile(&[], 0.5), None);
    assert_eq!(percentile(&[3.0], 0.95), Some(3.0));
    let v: Vec<f64> = (0..21).rev().map(f64::from).collect();
    assert_abs_diff_eq!(percentile(&v, 0.95).unwrap(), 19.0, epsilon = 1e-12);
    assert_abs_diff_eq!(percentile(&[0.0, 10.0], 0.95).unwrap(), 9.5, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn overlap_matches_set_counts((_, a, b) in mask_pair()) {
        let pa: HashSet<usize> = (0..a.len()).filter(|&i| a[i]).collect();
        let pb: HashSet<usize> = (0..b.len()).filter(|&i| b[i]).collect();
        let inter = pa.intersection(&pb).count() as f64;
        let union = pa.union(&pb).count() as f64;
        let o = overlap_metrics(&a, &b).unwrap();
        if union == 0.0 {
            prop_assert_eq!(o.dice, 1.0);
        } else {
            prop_assert!((o.dice - 2.0 * inter / (pa.len() + pb.len()) as f64).abs() < 1e-12);
            prop_assert!((o.jaccard - inter / union).abs() < 1e-12);
            // Jaccard and Dice are tied by J = D / (2 − D).
            prop_assert!((o.jaccard - o.dice / (2.0 - o.dice)).abs() < 1e-12);
        }
        if !pb.is_empty() {
            prop_assert!((o.sensitivity.unwrap() - inter / pb.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_matches_definition((shape, a, _) in mask_pair()) {
        let s = surface_voxels(&a, shape);
        let want: HashSet<usize> = surface_oracle(&a, shape).into_iter().collect();
        let got: HashSet<usize> = (0..s.len()).filter(|&i| s[i]).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn distances_match_brute_force((shape, a, b) in mask_pair(), sp in spacing()) {
        prop_assume!(a.contains(&true) && b.contains(&true));
        let mut got = bidirectional_surface_distances(&a, &b, shape, sp).unwrap();
        let mut want = brute_force_distances(&a, &b, shape, sp);
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
        }
    }

    #[test]
    fn surface_distances_are_symmetric((shape, a, b) in mask_pair(), sp in spacing()) {
        prop_assume!(a.contains(&true) && b.contains(&true));
        let ab = surface_distances(&a, &b, shape, sp).unwrap();
        let ba = surface_distances(&b, &a, shape, sp).unwrap();
        prop_assert!((ab.hd95_mm - ba.hd95_mm).abs() < 1e-12);
        prop_assert!((ab.asd_mm - ba.asd_mm).abs() < 1e-12);
        prop_assert!(ab.hd95_mm >= 0.0 && ab.asd_mm >= 0.0);
    }

    #[test]
    fn metrics_are_translation_invariant(
        (shape, a, b) in mask_pair(),
        sp in spacing(),
        shift in [0usize..3, 0usize..3, 0usize..3],
    ) {
        prop_assume!(a.contains(&true) && b.contains(&true));
        // Embed both masks with a one-voxel empty border so the grid edge does
        // not touch them, then move them together inside a larger grid.
        let big = [shape[0] + 5, shape[1] + 5, shape[2] + 5];
        let embed = |m: &[bool], off: [usize; 3]| {
            let mut out = vec![false; big.iter().product()];
            for (i, &v) in m.iter().enumerate() {
                let c = coords(i, shape);
                out[((c[0] + off[0]) * big[1] + c[1] + off[1]) * big[2] + c[2] + off[2]] = v;
            }
            out
        };
        let base = [1, 1, 1];
        let moved = [1 + shift[0], 1 + shift[1], 1 + shift[2]];
        let s0 = surface_distances(&embed(&a, base), &embed(&b, base), big, sp).unwrap();
        let s1 = surface_distances(&embed(&a, moved), &embed(&b, moved), big, sp).unwrap();
        prop_assert!((s0.hd95_mm - s1.hd95_mm).abs() < 1e-9);
        prop_assert!((s0.asd_mm - s1.asd_mm).abs() < 1e-9);
        let o0 = overlap_metrics(&embed(&a, base), &embed(&b, base)).unwrap();
        let o1 = overlap_metrics(&embed(&a, moved), &embed(&b, moved)).unwrap();
        prop_assert_eq!(o0, o1);
    }

    #[test]
    fn growing_the_prediction_never_lowers_sensitivity((_, a, b) in mask_pair(), extra in any::<u64>()) {
        prop_assume!(b.contains(&true));
        let grown: Vec<bool> = a.iter().enumerate().map(|(i, &v)| v || (extra >> (i % 64)) & 1 == 1).collect();
        let s0 = overlap_metrics(&a, &b).unwrap().sensitivity.unwrap();
        let s1 = overlap_metrics(&grown, &b).unwrap().sensitivity.unwrap();
        prop_assert!(s1 >= s0);
    }

    #[test]
    fn adding_true_positives_raises_dice((_, a, b) in mask_pair()) {
        // Moving one missed ground-truth voxel into the prediction strictly helps.
        let missed = (0..a.len()).find(|&i| b[i] && !a[i]);
        prop_assume!(missed.is_some());
        let mut better = a.clone();
        better[missed.unwrap()] = true;
        let d0 = overlap_metrics(&a, &b).unwrap().dice;
        let d1 = overlap_metrics(&better, &b).unwrap().dice;
        prop_assert!(d1 > d0);
    }
}
