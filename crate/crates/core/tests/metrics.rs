use bimodal_segnet::metrics::{mean_iou, pixel_accuracy, ConfusionCounts};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class IoU by scanning every pixel once per class.
fn brute_iou(pred: &[usize], gt: &[usize], classes: usize, with_bg: bool) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::new();
    for c in 0..classes {
        let inter = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g == c).count();
        let union = pred.iter().zip(gt).filter(|&(&p, &g)| p == c || g == c).count();
        per.push((union > 0 && (with_bg || c > 0)).then(|| inter as f64 / union as f64));
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per, mean)
}

#[test]
fn hand_case_seven_twelfths() {
    // Class 0: inter 1, union 2. Class 1: inter 2, union 3.
    let gt = [0, 0, 1, 1];
    let pred = [0, 1, 1, 1];
    let r = mean_iou(&pred, &gt, 2, true).unwrap();
    assert_eq!(r.per_class, vec![Some(1.0 / 2.0), Some(2.0 / 3.0)]);
    assert_eq!(r.miou, (1.0 / 2.0 + 2.0 / 3.0) / 2.0);
    assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
    assert_eq!(pixel_accuracy(&pred, &gt).unwrap(), 0.75);
}

#[test]
fn brute_force_agreement_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E7);
    for _ in 0..200 {
        let classes = rng.random_range(1..=11);
        let n = rng.random_range(1..=400);
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let correct = pred.iter().zip(&gt).filter(|(p, g)| p == g).count();
        assert_eq!(pixel_accuracy(&pred, &gt).unwrap(), correct as f64 / n as f64);
        for with_bg in [true, false] {
            let r = mean_iou(&pred, &gt, classes, with_bg).unwrap();
            let (per, mean) = brute_iou(&pred, &gt, classes, with_bg);
            assert_eq!(r.per_class, per);
            assert_eq!(r.miou, mean);
            let counts = ConfusionCounts::from_grids(&pred, &gt, classes).unwrap();
            assert_eq!(counts.per_class_iou(with_bg), per);
            assert_eq!(counts.miou(with_bg), mean);
            assert_eq!(counts.pixel_accuracy(), correct as f64 / n as f64);
        }
    }
}

#[test]
fn absent_classes_are_excluded() {
    let r = mean_iou(&[0, 0, 2], &[0, 0, 2], 5, true).unwrap();
    assert_eq!(r.per_class, vec![Some(1.0), None, Some(1.0), None, None]);
    assert_eq!(r.miou, 1.0);
}

#[test]
fn rejects_bad_grids() {
    assert!(mean_iou(&[0, 1], &[0], 2, true).is_err());
    assert!(mean_iou(&[], &[], 2, true).is_err());
    assert!(mean_iou(&[3], &[0], 2, true).is_err());
    assert!(pixel_accuracy(&[0], &[0, 0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn merged_counts_equal_counts_of_concatenation(
        a in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        b in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let (pa, ga) = split(&a);
        let (pb, gb) = split(&b);
        let mut merged = ConfusionCounts::from_grids(&pa, &ga, 4).unwrap();
        merged.merge(&ConfusionCounts::from_grids(&pb, &gb, 4).unwrap());
        let all: Vec<(usize, usize)> = a.iter().chain(&b).copied().collect();
        let (p, g) = split(&all);
        prop_assert_eq!(merged, ConfusionCounts::from_grids(&p, &g, 4).unwrap());
    }

    #[test]
    fn metrics_are_bounded_and_perfect_on_identity(
        gt in prop::collection::vec(0usize..6, 1..100),
    ) {
        let r = mean_iou(&gt, &gt, 6, true).unwrap();
        prop_assert_eq!(r.miou, 1.0);
        prop_assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
        let shifted: Vec<usize> = gt.iter().map(|c| (c + 1) % 6).collect();
        let s = mean_iou(&shifted, &gt, 6, true).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.miou));
        prop_assert_eq!(pixel_accuracy(&shifted, &gt).unwrap(), 0.0);
    }
}
