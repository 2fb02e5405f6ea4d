mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use logsad::metrics::{auroc, category_mean, f1_max};

fn labeled(seed: u64, n: usize, levels: Option<u32>) -> (Vec<f64>, Vec<bool>) {
    let mut rng = common::rng(seed);
    loop {
        let scores: Vec<f64> = (0..n)
            .map(|_| match levels {
                Some(l) => f64::from(rng.random_range(0..l)) / f64::from(l),
                None => rng.random_range(0.0..1.0),
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_equals_pair_count(seed in any::<u64>(), n in 2usize..=200, tied in any::<bool>()) {
        let (s, l) = labeled(seed, n, tied.then_some(5));
        prop_assert_eq!(auroc(&s, &l).unwrap(), common::brute_auroc(&s, &l));
    }

    #[test]
    fn f1_equals_threshold_sweep(seed in any::<u64>(), n in 2usize..=200, tied in any::<bool>()) {
        let (s, l) = labeled(seed, n, tied.then_some(5));
        let got = f1_max(&s, &l).unwrap();
        let (value, threshold) = common::brute_f1(&s, &l);
        prop_assert_eq!(got.value, value);
        prop_assert_eq!(got.threshold, threshold);
    }

    #[test]
    fn flipping_labels_complements_auroc(seed in any::<u64>(), n in 2usize..=200) {
        let (s, l) = labeled(seed, n, Some(7));
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        let a = auroc(&s, &l).unwrap();
        prop_assert!((auroc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn increasing_transform_keeps_auroc(seed in any::<u64>(), n in 2usize..=200) {
        let (s, l) = labeled(seed, n, Some(9));
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
    }
}

#[test]
fn five_category_mean_rounds_to_one_decimal() {
    let table: BTreeMap<&str, f64> = [
        ("breakfast_box", 95.7),
        ("juice_bottle", 95.2),
        ("pushpins", 83.6),
        ("screw_bag", 83.2),
        ("splicing_connectors", 93.5),
    ]
    .into_iter()
    .collect();
    let mean = category_mean(&table.values().copied().collect::<Vec<_>>()).unwrap();
    assert!((mean - 90.24).abs() < 1e-9);
    assert_eq!(format!("{mean:.1}"), "90.2");
}

#[test]
fn single_class_is_undefined() {
    assert!(auroc(&[0.1, 0.2], &[false, false]).is_err());
    assert!(f1_max(&[0.1, 0.2], &[false, false]).is_err());
}
