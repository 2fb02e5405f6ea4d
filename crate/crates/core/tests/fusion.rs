mod common;

use proptest::prelude::*;
use rand::Rng;

use logsad::calibration::{
    fit_stats, fuse, sigmoid, standardize, CalibrationStats, DEFAULT_SIGMA_FLOOR,
};

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn stats_strategy() -> impl Strategy<Value = CalibrationStats> {
    (any::<u64>(), 2usize..40).prop_map(|(seed, n)| {
        let mut rng = common::rng(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        fit_stats(&p, &q, DEFAULT_SIGMA_FLOOR).unwrap()
    })
}

#[test]
fn fit_matches_two_pass_oracle() {
    let mut rng = common::rng(12);
    for _ in 0..1000 {
        let n = rng.random_range(2..100);
        let offset = rng.random_range(-10.0..10.0);
        let p: Vec<f64> = (0..n)
            .map(|_| offset + rng.random_range(0.0..2.0))
            .collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let s = fit_stats(&p, &q, 1e-12).unwrap();
        let (mp, sp) = two_pass(&p);
        let (mq, sq) = two_pass(&q);
        assert!((s.mu_p - mp).abs() < 1e-12 && (s.sigma_p - sp).abs() < 1e-12);
        assert!((s.mu_in - mq).abs() < 1e-12 && (s.sigma_in - sq).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn monotone_in_each_argument(
        stats in stats_strategy(),
        sp in -1.0f64..3.0, sin in -1.0f64..3.0, dp in 0.0f64..1.0, din in 0.0f64..1.0, sc in 0u8..=1,
    ) {
        let base = fuse(sp, sin, sc, &stats);
        prop_assert!(fuse(sp + dp, sin, sc, &stats) >= base);
        prop_assert!(fuse(sp, sin + din, sc, &stats) >= base);
        prop_assert!(fuse(sp, sin, 1, &stats) >= base);
    }

    #[test]
    fn range_and_saturation(stats in stats_strategy(), sp in -1e3f64..1e3, sin in -1e3f64..1e3, sc in 0u8..=1) {
        let s = fuse(sp, sin, sc, &stats);
        prop_assert!(s > 0.0 && s <= 1.0);
        prop_assert_eq!(s == 1.0, sc == 1);
    }

    #[test]
    fn affine_rescaling_preserves_z(seed in any::<u64>(), n in 2usize..40, a in 0.01f64..100.0, b in -10.0f64..10.0) {
        let mut rng = common::rng(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let t: Vec<f64> = p.iter().map(|x| a * x + b).collect();
        let s1 = fit_stats(&p, &q, DEFAULT_SIGMA_FLOOR).unwrap();
        let s2 = fit_stats(&t, &q, DEFAULT_SIGMA_FLOOR).unwrap();
        prop_assume!(s1.flags.is_empty() && s2.flags.is_empty());
        for (x, y) in p.iter().zip(&t) {
            let z1 = standardize(*x, s1.mu_p, s1.sigma_p);
            let z2 = standardize(*y, s2.mu_p, s2.sigma_p);
            prop_assert!((z1 - z2).abs() < 1e-9);
            let f1 = fuse(*x, q[0], 0, &s1);
            let f2 = fuse(*y, q[0], 0, &s2);
            prop_assert!((f1 - f2).abs() < 1e-9);
        }
    }
}

#[test]
fn sigmoid_fixed_point() {
    assert_eq!(sigmoid(0.0), 0.5);
    let s = fit_stats(&[0.0, 2.0], &[1.0, 3.0], DEFAULT_SIGMA_FLOOR).unwrap();
    assert_eq!(fuse(s.mu_p, s.mu_in, 0, &s), 0.5);
}
